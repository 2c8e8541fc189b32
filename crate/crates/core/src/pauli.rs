//! Pauli strings, real-weighted Hamiltonians, model builders and exact
//! diagonalization.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{qubit_bit, Bitstring, Statevector, MAX_QUBITS};
use crate::rng;

/// Largest register for which a dense matrix is built.
pub const DENSE_LIMIT: usize = 14;

/// Terms with smaller magnitude are dropped during normalization.
pub const COEFF_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn letter(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }
}

/// One of `+1, +i, −1, −i`, stored as a power of `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Phase(u8);

impl Phase {
    pub const ONE: Phase = Phase(0);
    pub const I: Phase = Phase(1);
    pub const MINUS_ONE: Phase = Phase(2);
    pub const MINUS_I: Phase = Phase(3);

    pub fn from_power(k: u32) -> Self {
        Phase((k % 4) as u8)
    }

    pub fn power(self) -> u8 {
        self.0
    }

    pub fn to_complex(self) -> C64 {
        match self.0 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        }
    }
}

impl std::ops::Mul for Phase {
    type Output = Phase;
    fn mul(self, rhs: Phase) -> Phase {
        Phase((self.0 + rhs.0) % 4)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(["+1", "+i", "-1", "-i"][self.0 as usize])
    }
}

/// `P|s⟩ = phase·|out⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisAction {
    pub out: Bitstring,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    ops: Vec<Pauli>,
}

impl PauliString {
    pub fn identity(n_qubits: usize) -> Self {
        Self { ops: vec![Pauli::I; n_qubits] }
    }

    pub fn from_ops(ops: Vec<Pauli>) -> Self {
        Self { ops }
    }

    /// Builds a string from `(qubit, op)` pairs; rejects repeated qubits.
    pub fn from_sparse(n_qubits: usize, ops: &[(usize, Pauli)]) -> Result<Self> {
        let mut s = Self::identity(n_qubits);
        for &(q, p) in ops {
            if q >= n_qubits {
                return Err(Error::QubitOutOfRange { index: q, n_qubits });
            }
            if s.ops[q] != Pauli::I {
                return Err(Error::config(format!("qubit {q} appears twice")));
            }
            s.ops[q] = p;
        }
        Ok(s)
    }

    /// Parses `"X0 Y1 Z3"` (sparse form) or `"XYIZ"` (dense form of length n).
    pub fn parse(text: &str, n_qubits: usize) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() || text == "I" {
            return Ok(Self::identity(n_qubits));
        }
        if !text.contains(char::is_whitespace)
            && text.len() == n_qubits
            && text.chars().all(|c| Pauli::from_letter(c).is_some())
        {
            return Ok(Self { ops: text.chars().filter_map(Pauli::from_letter).collect() });
        }
        let mut ops = Vec::new();
        for tok in text.split_whitespace() {
            ops.push(parse_op_token(tok).map_err(|msg| Error::Parse { line: 0, msg })?);
        }
        Self::from_sparse(n_qubits, &ops).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })
    }

    pub fn n_qubits(&self) -> usize {
        self.ops.len()
    }

    pub fn ops(&self) -> &[Pauli] {
        &self.ops
    }

    pub fn op(&self, q: usize) -> Pauli {
        self.ops[q]
    }

    /// Number of X/Y factors.
    pub fn weight_xy(&self) -> usize {
        self.ops.iter().filter(|p| matches!(p, Pauli::X | Pauli::Y)).count()
    }

    pub fn is_diagonal(&self) -> bool {
        self.weight_xy() == 0
    }

    pub fn is_identity(&self) -> bool {
        self.ops.iter().all(|&p| p == Pauli::I)
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.ops.len()).filter(|&q| self.ops[q] != Pauli::I).collect()
    }

    /// Basis-index mask of the qubits flipped by this string.
    pub fn x_mask(&self) -> usize {
        self.mask_of(|p| matches!(p, Pauli::X | Pauli::Y))
    }

    /// Basis-index mask of the qubits contributing a `(−1)^s` sign (Z and Y).
    pub fn z_mask(&self) -> usize {
        self.mask_of(|p| matches!(p, Pauli::Z | Pauli::Y))
    }

    pub fn y_count(&self) -> u32 {
        self.ops.iter().filter(|&&p| p == Pauli::Y).count() as u32
    }

    fn mask_of(&self, pred: impl Fn(Pauli) -> bool) -> usize {
        let n = self.ops.len();
        (0..n).filter(|&q| pred(self.ops[q])).map(|q| qubit_bit(n, q)).sum()
    }

    /// Index-level action: `P|index⟩ = phase·|out⟩`.
    #[inline]
    pub(crate) fn act(&self, index: usize, x_mask: usize, z_mask: usize, ny: u32) -> (usize, Phase) {
        let flips = (index & z_mask).count_ones();
        (index ^ x_mask, Phase::from_power(ny + 2 * flips))
    }

    pub fn dense_matrix(&self) -> Result<DMatrix<C64>> {
        let n = self.n_qubits();
        if n > DENSE_LIMIT {
            return Err(Error::TooLarge(n, DENSE_LIMIT));
        }
        let dim = 1usize << n;
        let (xm, zm, ny) = (self.x_mask(), self.z_mask(), self.y_count());
        let mut m = DMatrix::zeros(dim, dim);
        for s in 0..dim {
            let (out, ph) = self.act(s, xm, zm, ny);
            m[(out, s)] = ph.to_complex();
        }
        Ok(m)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (q, p) in self.ops.iter().enumerate() {
            if *p == Pauli::I {
                continue;
            }
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{}{}", p.letter(), q)?;
            first = false;
        }
        if first {
            f.write_str("I")?;
        }
        Ok(())
    }
}

fn parse_op_token(tok: &str) -> std::result::Result<(usize, Pauli), String> {
    let mut chars = tok.chars();
    let letter = chars.next().ok_or_else(|| "empty operator".to_string())?;
    let op = match Pauli::from_letter(letter) {
        Some(Pauli::I) | None => return Err(format!("bad operator {tok:?}")),
        Some(p) => p,
    };
    let q = chars.as_str().parse::<usize>().map_err(|_| format!("bad qubit index in {tok:?}"))?;
    Ok((q, op))
}

/// Applies a Pauli string to a computational basis state.
///
/// Returns `(s̃, phase)` with `P|s⟩ = phase·|s̃⟩`, using `X|0⟩=|1⟩`,
/// `Y|0⟩=i|1⟩`, `Y|1⟩=−i|0⟩`, `Z|1⟩=−|1⟩`.
pub fn apply_to_basis(p: &PauliString, s: Bitstring) -> Result<BasisAction> {
    if s.n_bits() != p.n_qubits() {
        return Err(Error::Dimension(format!(
            "bitstring of length {} for a {}-qubit string",
            s.n_bits(),
            p.n_qubits()
        )));
    }
    let (out, phase) = p.act(s.index(), p.x_mask(), p.z_mask(), p.y_count());
    Ok(BasisAction { out: Bitstring::new(s.n_bits(), out)?, phase })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PauliTerm {
    pub coeff: f64,
    pub string: PauliString,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    Open,
}

/// Real-weighted sum of Pauli strings in canonical form: duplicates merged,
/// negligible coefficients dropped, first-appearance order kept.
#[derive(Clone, Debug, PartialEq)]
pub struct Hamiltonian {
    n_qubits: usize,
    terms: Vec<PauliTerm>,
}

impl Hamiltonian {
    pub fn new(n_qubits: usize, terms: Vec<PauliTerm>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::config(format!("unsupported qubit count {n_qubits}")));
        }
        let mut merged: Vec<PauliTerm> = Vec::new();
        let mut seen: HashMap<PauliString, usize> = HashMap::new();
        for t in terms {
            if t.string.n_qubits() != n_qubits {
                return Err(Error::Dimension(format!("term {} on {n_qubits} qubits", t.string)));
            }
            if !t.coeff.is_finite() {
                return Err(Error::NonFinite(format!("coefficient of {}", t.string)));
            }
            match seen.get(&t.string) {
                Some(&k) => merged[k].coeff += t.coeff,
                None => {
                    seen.insert(t.string.clone(), merged.len());
                    merged.push(t);
                }
            }
        }
        merged.retain(|t| t.coeff.abs() >= COEFF_EPS);
        Ok(Self { n_qubits, terms: merged })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn terms(&self) -> &[PauliTerm] {
        &self.terms
    }

    /// Sum of `|coeff|` over all terms; bounds the spectral radius.
    pub fn one_norm(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff.abs()).sum()
    }

    pub fn compile(&self) -> CompiledHamiltonian {
        CompiledHamiltonian::new(self)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = HamiltonianFile {
            n_qubits: self.n_qubits,
            terms: self
                .terms
                .iter()
                .map(|t| TermRecord { coeff: t.coeff, ops: t.string.to_string() })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: HamiltonianFile = serde_json::from_str(text)?;
        let mut terms = Vec::new();
        for (k, rec) in file.terms.iter().enumerate() {
            let string = PauliString::parse(&rec.ops, file.n_qubits)
                .map_err(|e| Error::Parse { line: k + 1, msg: e.to_string() })?;
            terms.push(PauliTerm { coeff: rec.coeff, string });
        }
        Self::new(file.n_qubits, terms)
    }

    /// Reads the text format, or JSON when the content starts with `{`.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            Self::from_json(&text)
        } else {
            parse_hamiltonian(&text)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HamiltonianFile {
    n_qubits: usize,
    terms: Vec<TermRecord>,
}

#[derive(Serialize, Deserialize)]
struct TermRecord {
    coeff: f64,
    ops: String,
}

fn bonds(n: usize, boundary: Boundary) -> Result<Vec<(usize, usize)>> {
    match boundary {
        Boundary::Periodic if n < 3 => {
            Err(Error::config(format!("periodic chain needs n >= 3, got {n}")))
        }
        Boundary::Open if n < 2 => Err(Error::config(format!("open chain needs n >= 2, got {n}"))),
        Boundary::Periodic => Ok((0..n).map(|i| (i, (i + 1) % n)).collect()),
        Boundary::Open => Ok((0..n - 1).map(|i| (i, i + 1)).collect()),
    }
}

/// `H = Σ_bonds Z_i Z_j − Σ_i X_i`.
pub fn build_tfim(n: usize, boundary: Boundary) -> Result<Hamiltonian> {
    let mut terms = Vec::new();
    for (i, j) in bonds(n, boundary)? {
        terms.push(PauliTerm {
            coeff: 1.0,
            string: PauliString::from_sparse(n, &[(i, Pauli::Z), (j, Pauli::Z)])?,
        });
    }
    for i in 0..n {
        terms.push(PauliTerm { coeff: -1.0, string: PauliString::from_sparse(n, &[(i, Pauli::X)])? });
    }
    Hamiltonian::new(n, terms)
}

/// `H = Σ_bonds (X_i X_j + Y_i Y_j + Z_i Z_j)`.
pub fn build_heisenberg(n: usize, boundary: Boundary) -> Result<Hamiltonian> {
    let mut terms = Vec::new();
    for (i, j) in bonds(n, boundary)? {
        for p in [Pauli::X, Pauli::Y, Pauli::Z] {
            terms.push(PauliTerm { coeff: 1.0, string: PauliString::from_sparse(n, &[(i, p), (j, p)])? });
        }
    }
    Hamiltonian::new(n, terms)
}

/// Parses the line-based text format.
///
/// ```text
/// # comment
/// 4
/// 0.25 X0 Y1 Z3
/// -1.5            # identity term
/// ```
pub fn parse_hamiltonian(text: &str) -> Result<Hamiltonian> {
    let mut n_qubits: Option<usize> = None;
    let mut terms = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let Some(n) = n_qubits else {
            let n = line.parse::<usize>().map_err(|_| err(format!("expected qubit count, got {line:?}")))?;
            if n == 0 || n > MAX_QUBITS {
                return Err(err(format!("unsupported qubit count {n}")));
            }
            n_qubits = Some(n);
            continue;
        };
        let mut toks = line.split_whitespace();
        let coeff_tok = toks.next().unwrap_or_default();
        let coeff: f64 = coeff_tok.parse().map_err(|_| err(format!("bad coefficient {coeff_tok:?}")))?;
        if !coeff.is_finite() {
            return Err(err(format!("coefficient {coeff_tok} is not finite")));
        }
        let mut ops = Vec::new();
        let toks: Vec<&str> = toks.collect();
        let toks = if toks == ["I"] { &[][..] } else { &toks[..] };
        for &tok in toks {
            let (q, p) = parse_op_token(tok).map_err(err)?;
            if q >= n {
                return Err(err(format!("qubit {q} out of range for {n} qubits")));
            }
            if ops.iter().any(|&(o, _)| o == q) {
                return Err(err(format!("duplicate qubit {q}")));
            }
            ops.push((q, p));
        }
        terms.push(PauliTerm { coeff, string: PauliString::from_sparse(n, &ops)? });
    }
    let n = n_qubits.ok_or(Error::Parse { line: 0, msg: "missing qubit count".into() })?;
    Hamiltonian::new(n, terms)
}

pub fn serialize_hamiltonian(h: &Hamiltonian) -> String {
    let mut out = format!("{}\n", h.n_qubits);
    for t in &h.terms {
        if t.string.is_identity() {
            out.push_str(&format!("{:?}\n", t.coeff));
        } else {
            out.push_str(&format!("{:?} {}\n", t.coeff, t.string));
        }
    }
    out
}

/// Dense `2ⁿ×2ⁿ` matrix of `h` (n ≤ 14).
pub fn dense_matrix(h: &Hamiltonian) -> Result<DMatrix<C64>> {
    if h.n_qubits > DENSE_LIMIT {
        return Err(Error::TooLarge(h.n_qubits, DENSE_LIMIT));
    }
    let dim = 1usize << h.n_qubits;
    let mut m = DMatrix::zeros(dim, dim);
    for t in &h.terms {
        let (xm, zm, ny) = (t.string.x_mask(), t.string.z_mask(), t.string.y_count());
        for s in 0..dim {
            let (out, ph) = t.string.act(s, xm, zm, ny);
            m[(out, s)] += ph.to_complex() * t.coeff;
        }
    }
    Ok(m)
}

/// Matrix-free form of a Hamiltonian: terms grouped by their bit-flip mask,
/// each group storing the summed complex coefficient per input basis state.
#[derive(Clone, Debug)]
pub struct CompiledHamiltonian {
    n_qubits: usize,
    groups: Vec<(usize, Vec<C64>)>,
}

impl CompiledHamiltonian {
    pub fn new(h: &Hamiltonian) -> Self {
        let dim = 1usize << h.n_qubits;
        let mut order: Vec<usize> = Vec::new();
        let mut by_mask: HashMap<usize, Vec<C64>> = HashMap::new();
        for t in &h.terms {
            let (xm, zm, ny) = (t.string.x_mask(), t.string.z_mask(), t.string.y_count());
            let coeffs = by_mask.entry(xm).or_insert_with(|| {
                order.push(xm);
                vec![C64::new(0.0, 0.0); dim]
            });
            for (s, c) in coeffs.iter_mut().enumerate() {
                let (_, ph) = t.string.act(s, xm, zm, ny);
                *c += ph.to_complex() * t.coeff;
            }
        }
        order.sort_unstable();
        let groups = order.into_iter().map(|m| (m, by_mask.remove(&m).unwrap())).collect();
        Self { n_qubits: h.n_qubits, groups }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// `out = H·amps`.
    pub fn apply(&self, amps: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
        for (mask, coeffs) in &self.groups {
            let mask = *mask;
            for (s, (a, c)) in amps.iter().zip(coeffs).enumerate() {
                out[s ^ mask] += c * a;
            }
        }
    }

    /// `⟨v|H|v⟩` for an arbitrary (not necessarily normalized) vector.
    pub fn expectation(&self, amps: &[C64]) -> f64 {
        let mut hv = vec![C64::new(0.0, 0.0); amps.len()];
        self.apply(amps, &mut hv);
        amps.iter().zip(&hv).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

/// Ground energy and state. Uses a dense eigensolver for small registers and
/// restarted Lanczos with full reorthogonalization otherwise.
pub fn exact_ground(h: &Hamiltonian) -> Result<(f64, Statevector)> {
    if h.n_qubits > DENSE_LIMIT {
        return Err(Error::TooLarge(h.n_qubits, DENSE_LIMIT));
    }
    let n = h.n_qubits;
    if n <= 7 {
        let m = dense_matrix(h)?;
        let eig = SymmetricEigen::new(m);
        let k = eig.eigenvalues.imin();
        let v: Vec<C64> = eig.eigenvectors.column(k).iter().copied().collect();
        let state = Statevector::normalized(n, v)?;
        return Ok((eig.eigenvalues[k], state));
    }
    let compiled = h.compile();
    let (e, v) = lanczos_lowest(&compiled, 0x5eed)?;
    Ok((e, Statevector::normalized(n, v)?))
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn lanczos_lowest(h: &CompiledHamiltonian, seed: u64) -> Result<(f64, Vec<C64>)> {
    const KRYLOV: usize = 100;
    const MAX_RESTARTS: usize = 50;
    let dim = 1usize << h.n_qubits();
    let scale = 1.0 + h.groups.iter().map(|(_, c)| c.iter().map(|z| z.norm()).fold(0.0, f64::max)).sum::<f64>();
    let tol = 1e-10 * scale;

    let mut r = rng::from_seed(seed);
    let mut start: Vec<C64> =
        (0..dim).map(|_| C64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5)).collect();
    let mut w = vec![C64::new(0.0, 0.0); dim];
    let mut best = (f64::INFINITY, start.clone());

    for _ in 0..MAX_RESTARTS {
        let nrm = norm(&start);
        start.iter_mut().for_each(|x| *x /= nrm);
        let mut basis: Vec<Vec<C64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let m = KRYLOV.min(dim);
        for j in 0..m {
            h.apply(&basis[j], &mut w);
            alpha.push(dot(&basis[j], &w).re);
            // Full reorthogonalization, applied twice for stability.
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &w);
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = norm(&w);
            if j + 1 == m || b < 1e-13 * scale {
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let k = alpha.len();
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let idx = eig.eigenvalues.imin();
        let y = eig.eigenvectors.column(idx);
        let mut x = vec![C64::new(0.0, 0.0); dim];
        for (i, v) in basis.iter().take(k).enumerate() {
            x.iter_mut().zip(v).for_each(|(a, b)| *a += b * y[i]);
        }
        let nx = norm(&x);
        x.iter_mut().for_each(|a| *a /= nx);
        h.apply(&x, &mut w);
        let e = dot(&x, &w).re;
        let res = w.iter().zip(&x).map(|(hw, xv)| (hw - xv * e).norm_sqr()).sum::<f64>().sqrt();
        if e < best.0 {
            best = (e, x.clone());
        }
        if res <= tol {
            return Ok((e, x));
        }
        start = x;
    }
    Err(Error::NonFinite(format!("Lanczos did not converge; best energy {}", best.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(s: &str) -> Bitstring {
        Bitstring::parse(s).unwrap()
    }

    #[test]
    fn basis_action_examples() {
        let zz = PauliString::parse("Z0 Z1", 2).unwrap();
        assert_eq!(apply_to_basis(&zz, bs("01")).unwrap(), BasisAction { out: bs("01"), phase: Phase::MINUS_ONE });
        let x = PauliString::parse("X0", 1).unwrap();
        assert_eq!(apply_to_basis(&x, bs("0")).unwrap(), BasisAction { out: bs("1"), phase: Phase::ONE });
        let xyz = PauliString::parse("X0 Y1 Z2", 3).unwrap();
        assert_eq!(apply_to_basis(&xyz, bs("011")).unwrap(), BasisAction { out: bs("101"), phase: Phase::I });
        assert!(apply_to_basis(&xyz, bs("01")).is_err());
    }

    #[test]
    fn term_counts() {
        assert_eq!(build_tfim(3, Boundary::Periodic).unwrap().terms().len(), 6);
        assert_eq!(build_tfim(4, Boundary::Open).unwrap().terms().len(), 7);
        assert_eq!(build_heisenberg(3, Boundary::Periodic).unwrap().terms().len(), 9);
        assert!(build_tfim(2, Boundary::Periodic).is_err());
        assert!(build_heisenberg(1, Boundary::Open).is_err());
    }

    #[test]
    fn parse_examples() {
        let h = parse_hamiltonian("2\n-1.0 X0\n-1.0 X1\n").unwrap();
        assert_eq!(h.n_qubits(), 2);
        assert_eq!(h.terms().len(), 2);
        let dup = parse_hamiltonian("2\n0.5 X0 X0\n");
        assert!(matches!(dup, Err(Error::Parse { line: 2, .. })));
        assert!(parse_hamiltonian("2\nnan X0\n").is_err());
        assert!(parse_hamiltonian("2\n0.5 X2\n").is_err());
        assert!(parse_hamiltonian("2\n0.5 W0\n").is_err());
        assert!(parse_hamiltonian("2\n0.5j X0\n").is_err());
    }

    #[test]
    fn comments_identity_and_merging() {
        let h = parse_hamiltonian("# header\n3\n1.5 # constant\n0.25 Z0 Z1\n0.25 Z0 Z1\n1e-14 X2\n").unwrap();
        assert_eq!(h.terms().len(), 2);
        assert!(h.terms()[0].string.is_identity());
        assert_eq!(h.terms()[1].coeff, 0.5);
        let h = parse_hamiltonian("2\n-0.5 I\n1.0 Z1\n").unwrap();
        assert!(h.terms()[0].string.is_identity());
        assert!(parse_hamiltonian("2\n-0.5 I Z1\n").is_err());
    }

    #[test]
    fn text_and_json_round_trip() {
        let h = build_tfim(3, Boundary::Periodic).unwrap();
        assert_eq!(parse_hamiltonian(&serialize_hamiltonian(&h)).unwrap(), h);
        assert_eq!(Hamiltonian::from_json(&h.to_json().unwrap()).unwrap(), h);
    }

    #[test]
    fn single_qubit_dense_matrices() {
        let z = parse_hamiltonian("1\n1.0 Z0\n").unwrap();
        let m = dense_matrix(&z).unwrap();
        assert_eq!(m[(0, 0)].re, 1.0);
        assert_eq!(m[(1, 1)].re, -1.0);
        let x = parse_hamiltonian("1\n1.0 X0\n").unwrap();
        let m = dense_matrix(&x).unwrap();
        assert_eq!(m[(0, 1)].re, 1.0);
        assert_eq!(m[(1, 0)].re, 1.0);
        assert_eq!(m[(0, 0)].norm(), 0.0);
    }

    #[test]
    fn dense_guard() {
        let h = build_tfim(15, Boundary::Open).unwrap();
        assert!(matches!(dense_matrix(&h), Err(Error::TooLarge(15, 14))));
        assert!(exact_ground(&h).is_err());
    }

    #[test]
    fn ground_of_single_z() {
        let (e, psi) = exact_ground(&parse_hamiltonian("1\n1.0 Z0\n").unwrap()).unwrap();
        assert!((e + 1.0).abs() < 1e-12);
        assert!((psi.amplitudes()[1].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heisenberg_dimer_ground_is_minus_three() {
        let (e, _) = exact_ground(&build_heisenberg(2, Boundary::Open).unwrap()).unwrap();
        assert!((e + 3.0).abs() < 1e-12);
    }

    #[test]
    fn lanczos_agrees_with_dense_solver() {
        for h in [
            build_tfim(8, Boundary::Periodic).unwrap(),
            build_heisenberg(8, Boundary::Open).unwrap(),
        ] {
            let dense = SymmetricEigen::new(dense_matrix(&h).unwrap()).eigenvalues.min();
            let (e, psi) = exact_ground(&h).unwrap();
            assert!((e - dense).abs() < 1e-9, "{e} vs {dense}");
            let c = h.compile();
            let mut hv = vec![C64::new(0.0, 0.0); psi.amplitudes().len()];
            c.apply(psi.amplitudes(), &mut hv);
            let res: f64 = hv.iter().zip(psi.amplitudes()).map(|(a, b)| (a - b * e).norm_sqr()).sum::<f64>().sqrt();
            assert!(res < 1e-7);
        }
    }
}
