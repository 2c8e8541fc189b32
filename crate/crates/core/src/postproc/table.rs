use num_complex::Complex64 as C64;

use super::{Postprocessor, WeightShape};
use crate::error::{Error, Result};

/// Fixed lookup table `f(s) = values[s]` with no trainable weights. The
/// constant-one table turns VQNHE into plain VQE.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    n: usize,
    values: Vec<C64>,
}

impl Table {
    pub fn new(n: usize, values: Vec<C64>) -> Result<Self> {
        if values.len() != 1usize << n {
            return Err(Error::Dimension(format!("{} table entries for {n} bits", values.len())));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("table entry".into()));
        }
        Ok(Self { n, values })
    }

    pub fn ones(n: usize) -> Self {
        Self { n, values: vec![C64::new(1.0, 0.0); 1 << n] }
    }

    /// Snapshot of another post-processor's current values.
    pub fn of(f: &dyn Postprocessor) -> Self {
        Self { n: f.n_bits(), values: f.table() }
    }
}

impl Postprocessor for Table {
    fn family(&self) -> &'static str {
        "table"
    }

    fn n_bits(&self) -> usize {
        self.n
    }

    fn weights(&self) -> &[f64] {
        &[]
    }

    fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        super::check_weights(0, weights)
    }

    fn eval(&self, s: usize) -> C64 {
        self.values[s]
    }

    fn grad(&self, _s: usize) -> Vec<C64> {
        Vec::new()
    }

    fn output_range(&self) -> f64 {
        let max = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let min = self.values.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
        max.max(1.0 / min).max(1.0)
    }

    fn range_guarded(&self) -> bool {
        self.values.iter().all(|v| v.norm() > 0.0)
    }

    fn is_complex(&self) -> bool {
        self.values.iter().any(|v| v.im != 0.0)
    }

    fn shapes(&self) -> Vec<WeightShape> {
        Vec::new()
    }

    fn box_clone(&self) -> Box<dyn Postprocessor> {
        Box::new(self.clone())
    }

    fn table(&self) -> Vec<C64> {
        self.values.clone()
    }
}
