//! Dense statevector simulation.
//!
//! Bit ordering: a bitstring `s₀s₁…sₙ₋₁` lists qubit 0 first, and its basis
//! index is `Σ_k s_k·2^(n−1−k)`. Qubit 0 is therefore the most significant
//! bit of the index.
//!
//! Rotation convention: every parameterized gate is `e^{iθP}` for an
//! involutory generator `P` (`RX = e^{iθX}`, `RZ = e^{iθZ}`,
//! `EXP_ZZ = e^{iθZ⊗Z}`, `EXP_SWAP = e^{iθ·SWAP}`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{weighted::WeightedAliasIndex, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const NORM_TOL: f64 = 1e-10;

/// Largest register the simulator accepts.
pub const MAX_QUBITS: usize = 24;

#[inline]
pub(crate) fn qubit_bit(n_qubits: usize, q: usize) -> usize {
    1usize << (n_qubits - 1 - q)
}

/// A computational-basis bitstring with qubit 0 leftmost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring {
    n_bits: usize,
    index: usize,
}

impl Bitstring {
    pub fn new(n_bits: usize, index: usize) -> Result<Self> {
        if n_bits > 63 || index >> n_bits != 0 {
            return Err(Error::Bitstring(format!("index {index} with {n_bits} bits")));
        }
        Ok(Self { n_bits, index })
    }

    pub fn zeros(n_bits: usize) -> Self {
        Self { n_bits, index: 0 }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() || text.len() > 63 {
            return Err(Error::Bitstring(text.to_string()));
        }
        let mut index = 0usize;
        for c in text.chars() {
            index <<= 1;
            match c {
                '0' => {}
                '1' => index |= 1,
                _ => return Err(Error::Bitstring(text.to_string())),
            }
        }
        Ok(Self { n_bits: text.len(), index })
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        let mut index = 0usize;
        for &b in bits {
            if b > 1 {
                return Err(Error::Bitstring(format!("{bits:?}")));
            }
            index = (index << 1) | b as usize;
        }
        Self::new(bits.len(), index)
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    /// Basis index of this string.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn bit(&self, k: usize) -> u8 {
        ((self.index >> (self.n_bits - 1 - k)) & 1) as u8
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.n_bits).map(|k| self.bit(k)).collect()
    }

    pub fn flipped(&self, k: usize) -> Self {
        Self { n_bits: self.n_bits, index: self.index ^ qubit_bit(self.n_bits, k) }
    }

    pub fn with_bit(&self, k: usize, value: u8) -> Self {
        let m = qubit_bit(self.n_bits, k);
        let index = if value == 0 { self.index & !m } else { self.index | m };
        Self { n_bits: self.n_bits, index }
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.n_bits {
            f.write_str(if self.bit(k) == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Bitstring {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Rotation angle source for a parameterized gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Angle {
    /// Index into the circuit's parameter table.
    Slot(usize),
    Fixed(f64),
}

impl Angle {
    fn resolve(self, params: &[f64]) -> f64 {
        match self {
            Angle::Slot(k) => params[k],
            Angle::Fixed(v) => v,
        }
    }
}

/// Gate kinds. Two-qubit gates list the control (or first) qubit first.
#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    H(usize),
    X(usize),
    Rx(usize, Angle),
    Rz(usize, Angle),
    Cx(usize, usize),
    Cy(usize, usize),
    Cz(usize, usize),
    ExpZz(usize, usize, Angle),
    ExpSwap(usize, usize, Angle),
    /// Arbitrary single-qubit unitary, row-major.
    U2(usize, [[C64; 2]; 2]),
}

/// Involutory generator of a parameterized gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    X(usize),
    Z(usize),
    ZZ(usize, usize),
    Swap(usize, usize),
}

impl Gate {
    pub fn kind(&self) -> &'static str {
        match self {
            Gate::H(_) => "H",
            Gate::X(_) => "X",
            Gate::Rx(..) => "RX",
            Gate::Rz(..) => "RZ",
            Gate::Cx(..) => "CX",
            Gate::Cy(..) => "CY",
            Gate::Cz(..) => "CZ",
            Gate::ExpZz(..) => "EXP_ZZ",
            Gate::ExpSwap(..) => "EXP_SWAP",
            Gate::U2(..) => "U2",
        }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::H(q) | Gate::X(q) | Gate::Rx(q, _) | Gate::Rz(q, _) | Gate::U2(q, _) => vec![q],
            Gate::Cx(a, b)
            | Gate::Cy(a, b)
            | Gate::Cz(a, b)
            | Gate::ExpZz(a, b, _)
            | Gate::ExpSwap(a, b, _) => vec![a, b],
        }
    }

    pub fn angle(&self) -> Option<Angle> {
        match *self {
            Gate::Rx(_, a) | Gate::Rz(_, a) | Gate::ExpZz(_, _, a) | Gate::ExpSwap(_, _, a) => Some(a),
            _ => None,
        }
    }

    pub fn param_slot(&self) -> Option<usize> {
        match self.angle() {
            Some(Angle::Slot(k)) => Some(k),
            _ => None,
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        self.qubits().len() == 2
    }

    /// The generator `P` of `e^{iθP}` for rotation gates.
    pub fn generator(&self) -> Option<Generator> {
        match *self {
            Gate::Rx(q, _) => Some(Generator::X(q)),
            Gate::Rz(q, _) => Some(Generator::Z(q)),
            Gate::ExpZz(a, b, _) => Some(Generator::ZZ(a, b)),
            Gate::ExpSwap(a, b, _) => Some(Generator::Swap(a, b)),
            _ => None,
        }
    }

    /// Dense matrix on the gate's own qubits (first listed qubit is the high
    /// bit of the local index).
    pub fn matrix(&self, theta: f64) -> Vec<Vec<C64>> {
        let z = C64::new(0.0, 0.0);
        let o = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        let r = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let (c, s) = (C64::new(theta.cos(), 0.0), C64::new(0.0, theta.sin()));
        let ep = C64::from_polar(1.0, theta);
        let em = C64::from_polar(1.0, -theta);
        match self {
            Gate::H(_) => vec![vec![r, r], vec![r, -r]],
            Gate::X(_) => vec![vec![z, o], vec![o, z]],
            Gate::Rx(..) => vec![vec![c, s], vec![s, c]],
            Gate::Rz(..) => vec![vec![ep, z], vec![z, em]],
            Gate::U2(_, m) => vec![m[0].to_vec(), m[1].to_vec()],
            Gate::Cx(..) => vec![
                vec![o, z, z, z],
                vec![z, o, z, z],
                vec![z, z, z, o],
                vec![z, z, o, z],
            ],
            Gate::Cy(..) => vec![
                vec![o, z, z, z],
                vec![z, o, z, z],
                vec![z, z, z, -i],
                vec![z, z, i, z],
            ],
            Gate::Cz(..) => vec![
                vec![o, z, z, z],
                vec![z, o, z, z],
                vec![z, z, o, z],
                vec![z, z, z, -o],
            ],
            Gate::ExpZz(..) => vec![
                vec![ep, z, z, z],
                vec![z, em, z, z],
                vec![z, z, em, z],
                vec![z, z, z, ep],
            ],
            Gate::ExpSwap(..) => vec![
                vec![ep, z, z, z],
                vec![z, c, s, z],
                vec![z, s, c, z],
                vec![z, z, z, ep],
            ],
        }
    }

    fn check(&self, n_qubits: usize, n_params: usize) -> Result<()> {
        let qs = self.qubits();
        for &q in &qs {
            if q >= n_qubits {
                return Err(Error::QubitOutOfRange { index: q, n_qubits });
            }
        }
        if qs.len() == 2 && qs[0] == qs[1] {
            return Err(Error::config(format!("{} acts twice on qubit {}", self.kind(), qs[0])));
        }
        if let Some(k) = self.param_slot() {
            if k >= n_params {
                return Err(Error::config(format!("parameter slot {k} >= {n_params}")));
            }
        }
        if let Some(Angle::Fixed(v)) = self.angle() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{} angle", self.kind())));
            }
        }
        Ok(())
    }

    /// Same gate with the angle negated; unitary inverse for every kind.
    fn apply_inverse(&self, amps: &mut [C64], n: usize, theta: f64) {
        match self {
            Gate::U2(q, m) => {
                let adj = [[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]];
                apply_1q(amps, n, *q, adj);
            }
            _ => self.apply_raw(amps, n, -theta),
        }
    }

    fn apply_raw(&self, amps: &mut [C64], n: usize, theta: f64) {
        match *self {
            Gate::H(q) => {
                let r = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                apply_1q(amps, n, q, [[r, r], [r, -r]]);
            }
            Gate::X(q) => {
                let b = qubit_bit(n, q);
                for_each_1q(amps.len(), b, |i| amps.swap(i, i | b));
            }
            Gate::Rx(q, _) => {
                let c = C64::new(theta.cos(), 0.0);
                let s = C64::new(0.0, theta.sin());
                apply_1q(amps, n, q, [[c, s], [s, c]]);
            }
            Gate::Rz(q, _) => {
                let b = qubit_bit(n, q);
                let (ep, em) = (C64::from_polar(1.0, theta), C64::from_polar(1.0, -theta));
                for (i, a) in amps.iter_mut().enumerate() {
                    *a *= if i & b == 0 { ep } else { em };
                }
            }
            Gate::U2(q, m) => apply_1q(amps, n, q, m),
            Gate::Cx(c, t) => {
                let (bc, bt) = (qubit_bit(n, c), qubit_bit(n, t));
                for_each_2q(amps.len(), bc, bt, |i| amps.swap(i | bc, i | bc | bt));
            }
            Gate::Cy(c, t) => {
                let (bc, bt) = (qubit_bit(n, c), qubit_bit(n, t));
                let i_unit = C64::new(0.0, 1.0);
                for_each_2q(amps.len(), bc, bt, |i| {
                    let (j0, j1) = (i | bc, i | bc | bt);
                    let (a0, a1) = (amps[j0], amps[j1]);
                    amps[j0] = -i_unit * a1;
                    amps[j1] = i_unit * a0;
                });
            }
            Gate::Cz(a, b) => {
                let m = qubit_bit(n, a) | qubit_bit(n, b);
                for (i, amp) in amps.iter_mut().enumerate() {
                    if i & m == m {
                        *amp = -*amp;
                    }
                }
            }
            Gate::ExpZz(a, b, _) => {
                let (ba, bb) = (qubit_bit(n, a), qubit_bit(n, b));
                let (ep, em) = (C64::from_polar(1.0, theta), C64::from_polar(1.0, -theta));
                for (i, amp) in amps.iter_mut().enumerate() {
                    let odd = ((i & ba) != 0) ^ ((i & bb) != 0);
                    *amp *= if odd { em } else { ep };
                }
            }
            Gate::ExpSwap(a, b, _) => {
                let (ba, bb) = (qubit_bit(n, a), qubit_bit(n, b));
                let ep = C64::from_polar(1.0, theta);
                let c = C64::new(theta.cos(), 0.0);
                let s = C64::new(0.0, theta.sin());
                for_each_2q(amps.len(), ba, bb, |i| {
                    let (i01, i10, i11) = (i | bb, i | ba, i | ba | bb);
                    amps[i] *= ep;
                    amps[i11] *= ep;
                    let (x, y) = (amps[i01], amps[i10]);
                    amps[i01] = c * x + s * y;
                    amps[i10] = s * x + c * y;
                });
            }
        }
    }
}

impl Generator {
    /// `out = P·amps`.
    pub fn apply(&self, amps: &[C64], out: &mut [C64], n: usize) {
        out.copy_from_slice(amps);
        match *self {
            Generator::X(q) => {
                let b = qubit_bit(n, q);
                for_each_1q(out.len(), b, |i| out.swap(i, i | b));
            }
            Generator::Z(q) => {
                let b = qubit_bit(n, q);
                for (i, a) in out.iter_mut().enumerate() {
                    if i & b != 0 {
                        *a = -*a;
                    }
                }
            }
            Generator::ZZ(p, q) => {
                let (bp, bq) = (qubit_bit(n, p), qubit_bit(n, q));
                for (i, a) in out.iter_mut().enumerate() {
                    if ((i & bp) != 0) ^ ((i & bq) != 0) {
                        *a = -*a;
                    }
                }
            }
            Generator::Swap(p, q) => {
                let (bp, bq) = (qubit_bit(n, p), qubit_bit(n, q));
                for_each_2q(out.len(), bp, bq, |i| out.swap(i | bp, i | bq));
            }
        }
    }
}

#[inline]
fn insert_zero(x: usize, bit: usize) -> usize {
    let low = x & (bit - 1);
    ((x ^ low) << 1) | low
}

#[inline]
fn for_each_1q(dim: usize, bit: usize, mut f: impl FnMut(usize)) {
    for k in 0..dim / 2 {
        f(insert_zero(k, bit));
    }
}

/// Calls `f` on every index whose bits `b1` and `b2` are both zero.
#[inline]
fn for_each_2q(dim: usize, b1: usize, b2: usize, mut f: impl FnMut(usize)) {
    let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
    for k in 0..dim / 4 {
        f(insert_zero(insert_zero(k, lo), hi));
    }
}

fn apply_1q(amps: &mut [C64], n: usize, q: usize, m: [[C64; 2]; 2]) {
    let b = qubit_bit(n, q);
    for_each_1q(amps.len(), b, |i| {
        let j = i | b;
        let (a0, a1) = (amps[i], amps[j]);
        amps[i] = m[0][0] * a0 + m[0][1] * a1;
        amps[j] = m[1][0] * a0 + m[1][1] * a1;
    });
}

/// Normalized state of `n_qubits` qubits as 2ⁿ dense amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl Statevector {
    pub fn zeros(n_qubits: usize) -> Self {
        Self::basis(Bitstring::zeros(n_qubits))
    }

    pub fn basis(bits: Bitstring) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << bits.n_bits()];
        amps[bits.index()] = C64::new(1.0, 0.0);
        Self { n_qubits: bits.n_bits(), amps }
    }

    /// Checks length and unit norm (within 1e-10).
    pub fn from_amplitudes(n_qubits: usize, amps: Vec<C64>) -> Result<Self> {
        if n_qubits > MAX_QUBITS || amps.len() != 1usize << n_qubits {
            return Err(Error::Dimension(format!(
                "{} amplitudes for {n_qubits} qubits",
                amps.len()
            )));
        }
        let state = Self { n_qubits, amps };
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Dimension(format!("state norm² is {norm}")));
        }
        Ok(state)
    }

    /// Rescales arbitrary nonzero amplitudes to unit norm.
    pub fn normalized(n_qubits: usize, mut amps: Vec<C64>) -> Result<Self> {
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Dimension("cannot normalize a zero vector".into()));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Self::from_amplitudes(n_qubits, amps)
    }

    /// Product of singlets `(|01⟩−|10⟩)/√2` on qubit pairs (0,1), (2,3), ….
    pub fn bell_pairs(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits % 2 != 0 {
            return Err(Error::config(format!("bell_pairs needs an even qubit count, got {n_qubits}")));
        }
        let pairs = n_qubits / 2;
        let amp = (0.5f64).powf(pairs as f64 / 2.0);
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n_qubits];
        // Each pair contributes either 01 (+) or 10 (−).
        for choice in 0..(1usize << pairs) {
            let mut index = 0usize;
            let mut sign = 1.0;
            for p in 0..pairs {
                let second = (choice >> (pairs - 1 - p)) & 1 == 1;
                index = (index << 2) | if second { 0b10 } else { 0b01 };
                if second {
                    sign = -sign;
                }
            }
            amps[index] = C64::new(sign * amp, 0.0);
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn amplitude(&self, bits: Bitstring) -> C64 {
        self.amps[bits.index()]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `⟨self|other⟩`.
    pub fn inner_product(&self, other: &Statevector) -> Result<C64> {
        inner_product(self, other)
    }

    pub fn apply_gate(&mut self, gate: &Gate, params: &[f64]) -> Result<()> {
        gate.check(self.n_qubits, params.len())?;
        let theta = gate.angle().map_or(0.0, |a| a.resolve(params));
        gate.apply_raw(&mut self.amps, self.n_qubits, theta);
        Ok(())
    }
}

/// `⟨a|b⟩ = Σ conj(a_s)·b_s`.
pub fn inner_product(a: &Statevector, b: &Statevector) -> Result<C64> {
    if a.n_qubits != b.n_qubits {
        return Err(Error::Dimension(format!("{} vs {} qubits", a.n_qubits, b.n_qubits)));
    }
    Ok(a.amps.iter().zip(&b.amps).map(|(x, y)| x.conj() * y).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    Zeros,
    Bits(Bitstring),
    BellPairs,
}

impl InitialState {
    pub fn prepare(&self, n_qubits: usize) -> Result<Statevector> {
        match self {
            InitialState::Zeros => Ok(Statevector::zeros(n_qubits)),
            InitialState::Bits(b) => {
                if b.n_bits() != n_qubits {
                    return Err(Error::Dimension(format!(
                        "initial bitstring {b} for {n_qubits} qubits"
                    )));
                }
                Ok(Statevector::basis(*b))
            }
            InitialState::BellPairs => Statevector::bell_pairs(n_qubits),
        }
    }

    fn label(&self) -> String {
        match self {
            InitialState::Zeros => "zeros".into(),
            InitialState::Bits(b) => b.to_string(),
            InitialState::BellPairs => "bell_pairs".into(),
        }
    }

    fn from_label(label: &str) -> Result<Self> {
        match label {
            "zeros" => Ok(InitialState::Zeros),
            "bell_pairs" => Ok(InitialState::BellPairs),
            other => Ok(InitialState::Bits(Bitstring::parse(other)?)),
        }
    }
}

/// Ordered gate sequence with a parameter-slot table.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    initial: InitialState,
    gates: Vec<Gate>,
    n_params: usize,
}

impl Circuit {
    pub fn new(n_qubits: usize, initial: InitialState) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::config(format!("unsupported qubit count {n_qubits}")));
        }
        match &initial {
            InitialState::Bits(b) if b.n_bits() != n_qubits => {
                return Err(Error::Dimension(format!("initial bitstring {b} for {n_qubits} qubits")))
            }
            InitialState::BellPairs if n_qubits % 2 != 0 => {
                return Err(Error::config("bell_pairs needs an even qubit count"))
            }
            _ => {}
        }
        Ok(Self { n_qubits, initial, gates: Vec::new(), n_params: 0 })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn initial(&self) -> &InitialState {
        &self.initial
    }

    /// Appends a gate; slot references grow the parameter table as needed.
    pub fn push(&mut self, gate: Gate) -> Result<()> {
        let needed = gate.param_slot().map_or(self.n_params, |k| self.n_params.max(k + 1));
        gate.check(self.n_qubits, needed)?;
        self.n_params = needed;
        self.gates.push(gate);
        Ok(())
    }

    /// Allocates a fresh parameter slot.
    pub fn new_slot(&mut self) -> Angle {
        self.n_params += 1;
        Angle::Slot(self.n_params - 1)
    }

    /// Appends all gates of `other`, which must be parameter-free.
    pub fn extend_fixed(&mut self, other: &Circuit) -> Result<()> {
        if other.n_qubits != self.n_qubits {
            return Err(Error::Dimension("appended circuit width".into()));
        }
        for g in &other.gates {
            if g.param_slot().is_some() {
                return Err(Error::config("appended circuit must not reference parameter slots"));
            }
            self.push(g.clone())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for g in &self.gates {
            g.check(self.n_qubits, self.n_params)?;
        }
        self.initial.prepare(self.n_qubits).map(|_| ())
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::ParamCount { expected: self.n_params, got: params.len() });
        }
        if let Some(p) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {p}")));
        }
        Ok(())
    }

    /// Runs the circuit with gate `shift.0`'s angle offset by `shift.1`.
    pub fn run_shifted(&self, params: &[f64], shift: Option<(usize, f64)>) -> Result<Statevector> {
        self.check_params(params)?;
        let mut state = self.initial.prepare(self.n_qubits)?;
        self.apply_to(&mut state, params, shift)?;
        Ok(state)
    }

    /// Applies the gate sequence to an existing state.
    pub fn apply_to(
        &self,
        state: &mut Statevector,
        params: &[f64],
        shift: Option<(usize, f64)>,
    ) -> Result<()> {
        self.check_params(params)?;
        if state.n_qubits != self.n_qubits {
            return Err(Error::Dimension("state width differs from circuit".into()));
        }
        for (gi, g) in self.gates.iter().enumerate() {
            let mut theta = g.angle().map_or(0.0, |a| a.resolve(params));
            if let Some((sg, delta)) = shift {
                if sg == gi {
                    theta += delta;
                }
            }
            g.apply_raw(&mut state.amps, self.n_qubits, theta);
        }
        Ok(())
    }

    /// Applies the inverse of the gate sequence (`U†`) to a state.
    pub fn apply_adjoint(&self, state: &mut Statevector, params: &[f64]) -> Result<()> {
        self.check_params(params)?;
        for g in self.gates.iter().rev() {
            let theta = g.angle().map_or(0.0, |a| a.resolve(params));
            g.apply_inverse(&mut state.amps, self.n_qubits, theta);
        }
        Ok(())
    }

    pub(crate) fn apply_gate_inverse(&self, gi: usize, amps: &mut [C64], params: &[f64]) {
        let g = &self.gates[gi];
        let theta = g.angle().map_or(0.0, |a| a.resolve(params));
        g.apply_inverse(amps, self.n_qubits, theta);
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CircuitFile {
            n_qubits: self.n_qubits,
            initial: self.initial.label(),
            n_params: Some(self.n_params),
            gates: self.gates.iter().map(GateRecord::from_gate).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CircuitFile = serde_json::from_str(text)?;
        let mut c = Circuit::new(file.n_qubits, InitialState::from_label(&file.initial)?)?;
        for rec in &file.gates {
            c.push(rec.to_gate()?)?;
        }
        if let Some(np) = file.n_params {
            if np < c.n_params {
                return Err(Error::config(format!("n_params {np} below highest slot")));
            }
            c.n_params = np;
        }
        c.validate()?;
        Ok(c)
    }
}

/// `|ψ⟩ = U(θ)|init⟩`.
pub fn run_circuit(circuit: &Circuit, params: &[f64]) -> Result<Statevector> {
    circuit.run_shifted(params, None)
}

#[derive(Serialize, Deserialize)]
struct CircuitFile {
    n_qubits: usize,
    initial: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_params: Option<usize>,
    gates: Vec<GateRecord>,
}

#[derive(Serialize, Deserialize)]
struct GateRecord {
    kind: String,
    qubits: Vec<usize>,
    #[serde(default)]
    param: Option<usize>,
    #[serde(default)]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<[f64; 2]>>,
}

impl GateRecord {
    fn from_gate(g: &Gate) -> Self {
        let (param, value) = match g.angle() {
            Some(Angle::Slot(k)) => (Some(k), None),
            Some(Angle::Fixed(v)) => (None, Some(v)),
            None => (None, None),
        };
        let matrix = match g {
            Gate::U2(_, m) => Some(m.iter().flatten().map(|c| [c.re, c.im]).collect()),
            _ => None,
        };
        Self { kind: g.kind().to_string(), qubits: g.qubits(), param, value, matrix }
    }

    fn to_gate(&self) -> Result<Gate> {
        let bad = |msg: &str| Error::config(format!("gate {}: {msg}", self.kind));
        let angle = match (self.param, self.value) {
            (Some(_), Some(_)) => return Err(bad("carries both a param slot and a value")),
            (Some(k), None) => Some(Angle::Slot(k)),
            (None, Some(v)) => Some(Angle::Fixed(v)),
            (None, None) => None,
        };
        let arity = match self.kind.as_str() {
            "H" | "X" | "RX" | "RZ" | "U2" => 1,
            "CX" | "CY" | "CZ" | "EXP_ZZ" | "EXP_SWAP" => 2,
            _ => return Err(Error::Unknown { kind: "gate kind", name: self.kind.clone() }),
        };
        if self.qubits.len() != arity {
            return Err(bad("wrong number of qubits"));
        }
        let q = &self.qubits;
        let need_angle = || angle.ok_or_else(|| bad("missing angle"));
        let no_angle = |g: Gate| if angle.is_some() { Err(bad("takes no angle")) } else { Ok(g) };
        match self.kind.as_str() {
            "H" => no_angle(Gate::H(q[0])),
            "X" => no_angle(Gate::X(q[0])),
            "RX" => Ok(Gate::Rx(q[0], need_angle()?)),
            "RZ" => Ok(Gate::Rz(q[0], need_angle()?)),
            "CX" => no_angle(Gate::Cx(q[0], q[1])),
            "CY" => no_angle(Gate::Cy(q[0], q[1])),
            "CZ" => no_angle(Gate::Cz(q[0], q[1])),
            "EXP_ZZ" => Ok(Gate::ExpZz(q[0], q[1], need_angle()?)),
            "EXP_SWAP" => Ok(Gate::ExpSwap(q[0], q[1], need_angle()?)),
            "U2" => {
                let m = self.matrix.as_ref().ok_or_else(|| bad("missing matrix"))?;
                if m.len() != 4 {
                    return Err(bad("matrix needs 4 entries"));
                }
                let c = |k: usize| C64::new(m[k][0], m[k][1]);
                no_angle(Gate::U2(q[0], [[c(0), c(1)], [c(2), c(3)]]))
            }
            _ => unreachable!(),
        }
    }
}

/// Shot counts over measured bitstrings.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    n_qubits: usize,
    counts: BTreeMap<usize, u64>,
    total_shots: u64,
}

impl SampleBatch {
    pub fn from_counts(n_qubits: usize, counts: BTreeMap<usize, u64>) -> Result<Self> {
        let total_shots = counts.values().sum();
        if let Some(&k) = counts.keys().find(|&&k| k >> n_qubits != 0) {
            return Err(Error::Bitstring(format!("index {k} for {n_qubits} qubits")));
        }
        Ok(Self { n_qubits, counts, total_shots })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn total_shots(&self) -> u64 {
        self.total_shots
    }

    /// Counts keyed by basis index.
    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    pub fn count(&self, bits: Bitstring) -> u64 {
        self.counts.get(&bits.index()).copied().unwrap_or(0)
    }

    pub fn counts_by_string(&self) -> BTreeMap<String, u64> {
        self.counts
            .iter()
            .map(|(&k, &c)| (Bitstring { n_bits: self.n_qubits, index: k }.to_string(), c))
            .collect()
    }
}

/// Draws `shots` i.i.d. bitstrings from `|amplitude|²`.
pub fn sample(state: &Statevector, shots: u64, seed: u64) -> Result<SampleBatch> {
    sample_with(state, shots, &mut rng::from_seed(seed))
}

pub fn sample_with<R: Rng + ?Sized>(
    state: &Statevector,
    shots: u64,
    rng: &mut R,
) -> Result<SampleBatch> {
    if shots == 0 {
        return Err(Error::EmptyBatch);
    }
    let probs = state.probabilities();
    let dist = WeightedAliasIndex::new(probs)
        .map_err(|e| Error::Dimension(format!("invalid distribution: {e}")))?;
    let mut counts = BTreeMap::new();
    for _ in 0..shots {
        *counts.entry(dist.sample(rng)).or_insert(0u64) += 1;
    }
    Ok(SampleBatch { n_qubits: state.n_qubits, counts, total_shots: shots })
}

/// Nonzero outcome probabilities.
pub fn exact_distribution(state: &Statevector) -> BTreeMap<Bitstring, f64> {
    state
        .amps
        .iter()
        .enumerate()
        .filter(|(_, a)| a.norm_sqr() > 0.0)
        .map(|(i, a)| (Bitstring { n_bits: state.n_qubits, index: i }, a.norm_sqr()))
        .collect()
}
