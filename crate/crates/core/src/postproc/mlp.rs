use num_complex::Complex64 as C64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_weights, spin, Postprocessor, WeightShape};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    n_in: usize,
    n_out: usize,
    /// Offset of the row-major weight block; biases follow it.
    offset: usize,
    act: Option<Activation>,
}

/// Fully connected network on `±1` inputs whose scalar output `z` is gated as
/// `f(s) = exp(φ₀·tanh z)`. The gain `φ₀` is the last weight; with a cutoff
/// it is clamped to `[−cutoff, cutoff]` at evaluation and by [`project`].
///
/// [`project`]: Postprocessor::project
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    n: usize,
    layers: Vec<Layer>,
    weights: Vec<f64>,
    cutoff: Option<f64>,
}

struct Forward {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    z: f64,
}

impl Mlp {
    pub fn new(n: usize, hidden: &[usize], activations: &[Activation], cutoff: Option<f64>) -> Result<Self> {
        if hidden.len() != activations.len() {
            return Err(Error::config("one activation per hidden layer"));
        }
        if hidden.contains(&0) {
            return Err(Error::config("hidden width must be positive"));
        }
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut n_in = n;
        for (&w, &a) in hidden.iter().zip(activations) {
            layers.push(Layer { n_in, n_out: w, offset, act: Some(a) });
            offset += n_in * w + w;
            n_in = w;
        }
        layers.push(Layer { n_in, n_out: 1, offset, act: None });
        offset += n_in + 1;
        Ok(Self { n, layers, weights: vec![0.0; offset + 1], cutoff })
    }

    /// Gaussian weights of width `std`, zero biases, and `φ₀ = phi0`.
    pub fn randomize(&mut self, std: f64, phi0: f64, seed: u64) {
        let mut r = rng::from_seed(seed);
        let dist = Normal::new(0.0, std.max(0.0)).unwrap();
        for l in &self.layers {
            for k in 0..l.n_in * l.n_out {
                self.weights[l.offset + k] = if std > 0.0 { dist.sample(&mut r) } else { 0.0 };
            }
        }
        *self.weights.last_mut().unwrap() = phi0;
        self.project();
    }

    pub fn phi0(&self) -> f64 {
        *self.weights.last().unwrap()
    }

    pub fn cutoff(&self) -> Option<f64> {
        self.cutoff
    }

    fn phi0_effective(&self) -> f64 {
        match self.cutoff {
            Some(c) => self.phi0().clamp(-c, c),
            None => self.phi0(),
        }
    }

    fn forward(&self, s: usize) -> Forward {
        let mut x: Vec<f64> = (0..self.n).map(|k| spin(self.n, s, k)).collect();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = vec![x.clone()];
        let mut z = 0.0;
        for l in &self.layers {
            let w = &self.weights[l.offset..l.offset + l.n_in * l.n_out];
            let b = &self.weights[l.offset + l.n_in * l.n_out..l.offset + l.n_in * l.n_out + l.n_out];
            let y: Vec<f64> = (0..l.n_out)
                .map(|o| b[o] + w[o * l.n_in..(o + 1) * l.n_in].iter().zip(&x).map(|(a, v)| a * v).sum::<f64>())
                .collect();
            match l.act {
                Some(a) => {
                    x = y.iter().map(|&v| a.apply(v)).collect();
                    pre.push(y);
                    post.push(x.clone());
                }
                None => z = y[0],
            }
        }
        Forward { pre, post, z }
    }
}

impl Postprocessor for Mlp {
    fn family(&self) -> &'static str {
        "mlp"
    }

    fn n_bits(&self) -> usize {
        self.n
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        check_weights(self.weights.len(), weights)?;
        self.weights.copy_from_slice(weights);
        Ok(())
    }

    fn eval(&self, s: usize) -> C64 {
        let z = self.forward(s).z;
        C64::new((self.phi0_effective() * z.tanh()).exp(), 0.0)
    }

    fn grad(&self, s: usize) -> Vec<C64> {
        let mut out = vec![0.0; self.weights.len()];
        self.accumulate_grad(s, C64::new(1.0, 0.0), &mut out);
        out.into_iter().map(|g| C64::new(g, 0.0)).collect()
    }

    fn accumulate_grad(&self, s: usize, cot: C64, out: &mut [f64]) {
        let fw = self.forward(s);
        let phi0 = self.phi0_effective();
        let t = fw.z.tanh();
        let f = (phi0 * t).exp();
        let scale = cot.re * f;
        let last = self.weights.len() - 1;
        let phi0_free = self.cutoff.is_none_or(|c| self.phi0().abs() <= c);
        if phi0_free {
            out[last] += scale * t;
        }
        // δ for the current layer's outputs.
        let mut delta = vec![scale * phi0 * (1.0 - t * t)];
        for (li, l) in self.layers.iter().enumerate().rev() {
            let input = &fw.post[li];
            let wo = l.offset;
            let bo = l.offset + l.n_in * l.n_out;
            for o in 0..l.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                out[bo + o] += d;
                for i in 0..l.n_in {
                    out[wo + o * l.n_in + i] += d * input[i];
                }
            }
            if li == 0 {
                break;
            }
            let below = &self.layers[li - 1];
            let act = below.act.unwrap();
            let pre = &fw.pre[li - 1];
            let mut next = vec![0.0; l.n_in];
            for (i, nd) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for o in 0..l.n_out {
                    acc += delta[o] * self.weights[wo + o * l.n_in + i];
                }
                *nd = acc * act.derivative(pre[i], input[i]);
            }
            delta = next;
        }
    }

    fn output_range(&self) -> f64 {
        self.phi0_effective().abs().exp()
    }

    fn range_guarded(&self) -> bool {
        true
    }

    fn project(&mut self) {
        if let Some(c) = self.cutoff {
            let last = self.weights.len() - 1;
            self.weights[last] = self.weights[last].clamp(-c, c);
        }
    }

    fn shapes(&self) -> Vec<WeightShape> {
        let mut v = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            v.push(WeightShape::new(&format!("w{k}"), &[l.n_out, l.n_in]));
            v.push(WeightShape::new(&format!("b{k}"), &[l.n_out]));
        }
        v.push(WeightShape::new("phi0", &[1]));
        v
    }

    fn box_clone(&self) -> Box<dyn Postprocessor> {
        Box::new(self.clone())
    }
}
