use num_complex::Complex64 as C64;
use rand_distr::{Distribution, Normal};

use super::{check_weights, spin, Postprocessor, WeightShape};
use crate::error::Result;
use crate::rng;

/// `f(s) = exp(−Σ_{i<j} φ_ij (1−2s_i)(1−2s_j))`, weights in row-major
/// upper-triangle order `(0,1), (0,2), …, (n−2,n−1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jastrow {
    n: usize,
    phi: Vec<f64>,
}

impl Jastrow {
    pub fn zeros(n: usize) -> Self {
        Self { n, phi: vec![0.0; n * (n.saturating_sub(1)) / 2] }
    }

    pub fn random(n: usize, std: f64, seed: u64) -> Self {
        let mut j = Self::zeros(n);
        if std > 0.0 {
            let mut r = rng::from_seed(seed);
            let dist = Normal::new(0.0, std).unwrap();
            j.phi.iter_mut().for_each(|w| *w = dist.sample(&mut r));
        }
        j
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| (i, j)))
    }

    fn exponent_terms(&self, s: usize) -> impl Iterator<Item = f64> + '_ {
        self.pairs().map(move |(i, j)| spin(self.n, s, i) * spin(self.n, s, j))
    }
}

impl Postprocessor for Jastrow {
    fn family(&self) -> &'static str {
        "jastrow"
    }

    fn n_bits(&self) -> usize {
        self.n
    }

    fn weights(&self) -> &[f64] {
        &self.phi
    }

    fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        check_weights(self.phi.len(), weights)?;
        self.phi.copy_from_slice(weights);
        Ok(())
    }

    fn eval(&self, s: usize) -> C64 {
        let e: f64 = self.exponent_terms(s).zip(&self.phi).map(|(zz, p)| p * zz).sum();
        C64::new((-e).exp(), 0.0)
    }

    fn grad(&self, s: usize) -> Vec<C64> {
        let f = self.eval(s).re;
        self.exponent_terms(s).map(|zz| C64::new(-zz * f, 0.0)).collect()
    }

    fn output_range(&self) -> f64 {
        self.phi.iter().map(|p| p.abs()).sum::<f64>().exp()
    }

    fn range_guarded(&self) -> bool {
        true
    }

    fn shapes(&self) -> Vec<WeightShape> {
        vec![WeightShape::new("phi", &[self.phi.len()])]
    }

    fn box_clone(&self) -> Box<dyn Postprocessor> {
        Box::new(self.clone())
    }
}
