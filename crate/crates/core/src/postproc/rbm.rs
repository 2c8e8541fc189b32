use num_complex::Complex64 as C64;
use rand_distr::{Distribution, Normal};

use super::{bit, check_weights, Postprocessor, WeightShape};
use crate::error::Result;
use crate::rng;

/// Restricted Boltzmann machine
/// `f(s) = exp(Σ_i a_i s_i)·Π_j 2cosh(b_j + Σ_i W_ij s_i)` on literal
/// `{0,1}` inputs, evaluated in the log domain.
///
/// Weight order: `a` (N), `b` (M), `W` (N×M row-major by visible unit).
/// Complex machines store each weight as an `(re, im)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Rbm {
    n: usize,
    m: usize,
    complex: bool,
    weights: Vec<f64>,
}

/// `ln(2cosh x)` without overflow.
#[inline]
fn log_2cosh(x: C64) -> C64 {
    if x.re >= 0.0 {
        x + (1.0 + (-2.0 * x).exp()).ln()
    } else {
        -x + (1.0 + (2.0 * x).exp()).ln()
    }
}

impl Rbm {
    pub fn new(n_visible: usize, n_hidden: usize, complex: bool) -> Self {
        let count = n_visible + n_hidden + n_visible * n_hidden;
        let width = if complex { 2 } else { 1 };
        Self { n: n_visible, m: n_hidden, complex, weights: vec![0.0; count * width] }
    }

    pub fn randomize(&mut self, std: f64, seed: u64) {
        if std <= 0.0 {
            self.weights.iter_mut().for_each(|w| *w = 0.0);
            return;
        }
        let mut r = rng::from_seed(seed);
        let dist = Normal::new(0.0, std).unwrap();
        self.weights.iter_mut().for_each(|w| *w = dist.sample(&mut r));
    }

    pub fn n_hidden(&self) -> usize {
        self.m
    }

    #[inline]
    fn w(&self, k: usize) -> C64 {
        if self.complex {
            C64::new(self.weights[2 * k], self.weights[2 * k + 1])
        } else {
            C64::new(self.weights[k], 0.0)
        }
    }

    fn coupling(&self, i: usize, j: usize) -> C64 {
        self.w(self.n + self.m + i * self.m + j)
    }

    fn thetas(&self, s: usize) -> Vec<C64> {
        (0..self.m)
            .map(|j| {
                let mut t = self.w(self.n + j);
                for i in 0..self.n {
                    if bit(self.n, s, i) == 1.0 {
                        t += self.coupling(i, j);
                    }
                }
                t
            })
            .collect()
    }

    pub fn log_eval(&self, s: usize) -> C64 {
        let mut l = C64::new(0.0, 0.0);
        for i in 0..self.n {
            if bit(self.n, s, i) == 1.0 {
                l += self.w(i);
            }
        }
        for t in self.thetas(s) {
            l += log_2cosh(t);
        }
        l
    }

    /// Visits `(complex weight index, ∂f/∂w)` for every complex weight.
    fn for_each_partial(&self, s: usize, mut visit: impl FnMut(usize, C64)) {
        let f = self.log_eval(s).exp();
        let tanh: Vec<C64> = self.thetas(s).into_iter().map(|t| t.tanh()).collect();
        for i in 0..self.n {
            visit(i, f * bit(self.n, s, i));
        }
        for j in 0..self.m {
            visit(self.n + j, f * tanh[j]);
        }
        for i in 0..self.n {
            let si = bit(self.n, s, i);
            for j in 0..self.m {
                visit(self.n + self.m + i * self.m + j, f * tanh[j] * si);
            }
        }
    }
}

impl Postprocessor for Rbm {
    fn family(&self) -> &'static str {
        "rbm"
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
        let v = self.log_eval(s).exp();
        if self.complex {
            v
        } else {
            C64::new(v.re, 0.0)
        }
    }

    fn grad(&self, s: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.weights.len()];
        let complex = self.complex;
        self.for_each_partial(s, |k, d| {
            if complex {
                out[2 * k] = d;
                out[2 * k + 1] = d * C64::new(0.0, 1.0);
            } else {
                out[k] = C64::new(d.re, 0.0);
            }
        });
        out
    }

    fn accumulate_grad(&self, s: usize, cot: C64, out: &mut [f64]) {
        let complex = self.complex;
        let c = cot.conj();
        self.for_each_partial(s, |k, d| {
            let p = c * d;
            if complex {
                out[2 * k] += p.re;
                // ∂f/∂im = i·∂f/∂re
                out[2 * k + 1] -= p.im;
            } else {
                out[k] += p.re;
            }
        });
    }

    fn output_range(&self) -> f64 {
        let re = |k: usize| self.w(k).re.abs();
        let visible: f64 = (0..self.n).map(re).sum();
        let hidden: f64 = (0..self.m)
            .map(|j| std::f64::consts::LN_2 + re(self.n + j) + (0..self.n).map(|i| self.coupling(i, j).re.abs()).sum::<f64>())
            .sum();
        (visible + hidden).exp().max(1.0)
    }

    fn is_complex(&self) -> bool {
        self.complex
    }

    fn shapes(&self) -> Vec<WeightShape> {
        let dims = |d: &[usize]| {
            let mut v = d.to_vec();
            if self.complex {
                v.push(2);
            }
            v
        };
        vec![
            WeightShape::new("a", &dims(&[self.n])),
            WeightShape::new("b", &dims(&[self.m])),
            WeightShape::new("W", &dims(&[self.n, self.m])),
        ]
    }

    fn box_clone(&self) -> Box<dyn Postprocessor> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::fd_max_rel_error;
    use super::*;

    /// Direct product-form evaluation.
    fn oracle(r: &Rbm, s: usize) -> C64 {
        let n = r.n;
        let bits: Vec<f64> = (0..n).map(|i| ((s >> (n - 1 - i)) & 1) as f64).collect();
        let mut vis = C64::new(0.0, 0.0);
        for i in 0..n {
            vis += r.w(i) * bits[i];
        }
        let mut prod = vis.exp();
        for j in 0..r.m {
            let mut t = r.w(n + j);
            for i in 0..n {
                t += r.coupling(i, j) * bits[i];
            }
            prod *= 2.0 * t.cosh();
        }
        prod
    }

    #[test]
    fn zero_weights_give_two_to_the_m() {
        let r = Rbm::new(4, 6, true);
        assert!((0..16).all(|s| (r.eval(s) - C64::new(64.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn zero_input_is_hidden_bias_product() {
        let mut r = Rbm::new(3, 5, false);
        r.randomize(0.7, 4);
        let want: f64 = (0..5).map(|j| 2.0 * r.w(3 + j).re.cosh()).product();
        assert!((r.eval(0).re - want).abs() < 1e-12 * want);
    }

    #[test]
    fn complex_matches_product_oracle() {
        let mut r = Rbm::new(4, 8, true);
        r.randomize(0.4, 21);
        for s in 0..16 {
            let (a, b) = (r.eval(s), oracle(&r, s));
            assert!((a - b).norm() <= 1e-10 * b.norm());
        }
    }

    #[test]
    fn large_rbm_does_not_overflow() {
        let mut r = Rbm::new(10, 40, false);
        let w = vec![3.0; r.weights().len()];
        r.set_weights(&w).unwrap();
        assert!(r.log_eval(1023).re.is_finite());
        assert!(r.log_eval(1023).re > 700.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for complex in [false, true] {
            let mut r = Rbm::new(4, 6, complex);
            r.randomize(0.3, 5);
            for s in 0..16 {
                assert!(fd_max_rel_error(&r, s) < 1e-5, "complex={complex} s={s}");
                let g = r.grad(s);
                let f = r.eval(s);
                assert!((g[0] - f * bit(4, s, 0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn accumulate_agrees_with_grad() {
        let mut r = Rbm::new(3, 4, true);
        r.randomize(0.5, 6);
        let cot = C64::new(0.3, -1.2);
        for s in 0..8 {
            let mut a = vec![0.0; r.n_weights()];
            r.accumulate_grad(s, cot, &mut a);
            for (x, g) in a.iter().zip(r.grad(s)) {
                assert!((x - (cot.conj() * g).re).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn range_bounds_magnitude() {
        let mut r = Rbm::new(5, 10, true);
        r.randomize(0.3, 8);
        let bound = r.output_range();
        assert!((0..32).all(|s| r.eval(s).norm() <= bound));
    }
}
