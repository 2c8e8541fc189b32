//! Diagonal post-processors `f_φ(s)`.
//!
//! Bitstrings are passed as basis indices (qubit 0 is the most significant
//! bit). Complex weights are stored as consecutive `(re, im)` pairs, so every
//! family exposes a flat vector of real weights and `grad` returns
//! `∂f/∂w_k` for each real weight.

mod jastrow;
mod mlp;
mod rbm;
mod table;

use std::fmt;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::Bitstring;

pub use jastrow::Jastrow;
pub use mlp::{Activation, Mlp};
pub use rbm::Rbm;
pub use table::Table;

pub trait Postprocessor: Send + Sync + fmt::Debug {
    fn family(&self) -> &'static str;

    fn n_bits(&self) -> usize;

    fn weights(&self) -> &[f64];

    fn set_weights(&mut self, weights: &[f64]) -> Result<()>;

    fn n_weights(&self) -> usize {
        self.weights().len()
    }

    /// `f(s)` for basis index `s`.
    fn eval(&self, s: usize) -> C64;

    /// `∂f(s)/∂w_k` for every real weight `w_k`.
    fn grad(&self, s: usize) -> Vec<C64>;

    /// Adds `Re(conj(cot)·∂f(s)/∂w_k)` to `out[k]`.
    fn accumulate_grad(&self, s: usize, cot: C64, out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(self.grad(s)) {
            *o += (cot.conj() * g).re;
        }
    }

    /// `r ≥ 1` with `|f(s)| ≤ r` for all `s`; when [`range_guarded`] also
    /// `|f(s)| ≥ 1/r`.
    ///
    /// [`range_guarded`]: Postprocessor::range_guarded
    fn output_range(&self) -> f64;

    fn range_guarded(&self) -> bool {
        false
    }

    fn is_complex(&self) -> bool {
        false
    }

    /// Maps weights back into their admissible set after an update.
    fn project(&mut self) {}

    /// Named blocks of the flat weight vector, in storage order.
    fn shapes(&self) -> Vec<WeightShape>;

    fn box_clone(&self) -> Box<dyn Postprocessor>;

    /// `f` on every basis index.
    fn table(&self) -> Vec<C64> {
        (0..1usize << self.n_bits()).map(|s| self.eval(s)).collect()
    }
}

impl Clone for Box<dyn Postprocessor> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

fn check_bits(f: &dyn Postprocessor, s: Bitstring) -> Result<()> {
    if s.n_bits() != f.n_bits() {
        return Err(Error::Dimension(format!(
            "bitstring of length {} for a {}-bit post-processor",
            s.n_bits(),
            f.n_bits()
        )));
    }
    Ok(())
}

/// Checked evaluation on a bitstring.
pub fn eval(f: &dyn Postprocessor, s: Bitstring) -> Result<C64> {
    check_bits(f, s)?;
    Ok(f.eval(s.index()))
}

/// Checked gradient on a bitstring.
pub fn grad(f: &dyn Postprocessor, s: Bitstring) -> Result<Vec<C64>> {
    check_bits(f, s)?;
    Ok(f.grad(s.index()))
}

pub(crate) fn check_weights(expected: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != expected {
        return Err(Error::ParamCount { expected, got: weights.len() });
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::NonFinite(format!("weight {w}")));
    }
    Ok(())
}

/// Spin value `1 − 2s_k` of bit `k` (qubit order) of index `s`.
#[inline]
pub(crate) fn spin(n: usize, s: usize, k: usize) -> f64 {
    if (s >> (n - 1 - k)) & 1 == 1 {
        -1.0
    } else {
        1.0
    }
}

#[inline]
pub(crate) fn bit(n: usize, s: usize, k: usize) -> f64 {
    ((s >> (n - 1 - k)) & 1) as f64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl WeightShape {
    pub(crate) fn new(name: &str, shape: &[usize]) -> Self {
        Self { name: name.to_string(), shape: shape.to_vec() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Jastrow,
    Mlp,
    Rbm,
}

/// JSON description of a post-processor and its initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocSpec {
    pub family: Family,
    #[serde(default)]
    pub complex: bool,
    pub n_bits: usize,
    #[serde(default)]
    pub arch: Arch,
    #[serde(default)]
    pub phi0_cutoff: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

/// Family-specific architecture fields; unused fields are ignored.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    /// MLP hidden widths.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hidden: Vec<usize>,
    /// MLP hidden activations, one per hidden layer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub activations: Vec<Activation>,
    /// RBM hidden units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_hidden: Option<usize>,
    /// Gaussian initialization width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
    /// Initial MLP output gain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi0_init: Option<f64>,
}

impl PostprocSpec {
    pub fn jastrow(n_bits: usize) -> Self {
        Self { family: Family::Jastrow, complex: false, n_bits, arch: Arch::default(), phi0_cutoff: None, seed: 0 }
    }

    pub fn mlp(n_bits: usize, hidden: &[usize], activations: &[Activation], phi0_cutoff: Option<f64>) -> Self {
        Self {
            family: Family::Mlp,
            complex: false,
            n_bits,
            arch: Arch { hidden: hidden.to_vec(), activations: activations.to_vec(), ..Arch::default() },
            phi0_cutoff,
            seed: 0,
        }
    }

    pub fn rbm(n_bits: usize, n_hidden: usize, complex: bool) -> Self {
        Self {
            family: Family::Rbm,
            complex,
            n_bits,
            arch: Arch { n_hidden: Some(n_hidden), ..Arch::default() },
            phi0_cutoff: None,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init_std(mut self, std: f64) -> Self {
        self.arch.init_std = Some(std);
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds and randomly initializes the post-processor from `seed`.
    pub fn build(&self) -> Result<Box<dyn Postprocessor>> {
        if self.n_bits == 0 || self.n_bits > crate::qsim::MAX_QUBITS {
            return Err(Error::config(format!("unsupported n_bits {}", self.n_bits)));
        }
        if self.complex && self.family != Family::Rbm {
            return Err(Error::config("only the RBM family supports complex weights"));
        }
        let std = self.arch.init_std;
        Ok(match self.family {
            Family::Jastrow => Box::new(Jastrow::random(self.n_bits, std.unwrap_or(0.0), self.seed)),
            Family::Mlp => {
                if self.arch.hidden.len() != self.arch.activations.len() {
                    return Err(Error::config("mlp needs one activation per hidden layer"));
                }
                if let Some(c) = self.phi0_cutoff {
                    if !(c >= 0.0) {
                        return Err(Error::config(format!("phi0_cutoff must be non-negative, got {c}")));
                    }
                }
                let mut m = Mlp::new(
                    self.n_bits,
                    &self.arch.hidden,
                    &self.arch.activations,
                    self.phi0_cutoff,
                )?;
                m.randomize(std.unwrap_or(0.1), self.arch.phi0_init.unwrap_or(1.0), self.seed);
                Box::new(m)
            }
            Family::Rbm => {
                let m = self.arch.n_hidden.ok_or_else(|| Error::config("rbm needs arch.n_hidden"))?;
                let mut r = Rbm::new(self.n_bits, m, self.complex);
                r.randomize(std.unwrap_or(0.005), self.seed);
                Box::new(r)
            }
        })
    }
}

/// Flat weights plus the shape manifest of their blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub family: String,
    pub n_bits: usize,
    pub complex: bool,
    pub shapes: Vec<WeightShape>,
    pub weights: Vec<f64>,
}

impl Checkpoint {
    pub fn of(f: &dyn Postprocessor) -> Self {
        Self {
            family: f.family().to_string(),
            n_bits: f.n_bits(),
            complex: f.is_complex(),
            shapes: f.shapes(),
            weights: f.weights().to_vec(),
        }
    }

    /// Loads the weights into `f`, which must have the same layout.
    pub fn restore(&self, f: &mut dyn Postprocessor) -> Result<()> {
        if self.family != f.family() || self.n_bits != f.n_bits() || self.shapes != f.shapes() {
            return Err(Error::config(format!(
                "checkpoint layout ({}, {} bits) does not match post-processor ({}, {} bits)",
                self.family,
                self.n_bits,
                f.family(),
                f.n_bits()
            )));
        }
        f.set_weights(&self.weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
