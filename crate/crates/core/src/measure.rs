//! Star-qubit measurement circuits.
//!
//! For a non-diagonal Pauli string `P`, the appended circuit `V` (or `V'`)
//! maps the pair `{|a⟩, P|a⟩}` onto two computational outcomes that differ
//! only in the star qubit, so that sampling `V·U|init⟩` reveals the real (or
//! imaginary) part of `conj(ψ_a)·⟨a|P|b⟩·ψ_b` for partner bitstrings.

use std::f64::consts::FRAC_PI_4;

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString};
use crate::qsim::{qubit_bit, Angle, Bitstring, Circuit, Gate, InitialState, Statevector};
use crate::rng;

/// Largest register accepted by [`verify_eigenbasis`].
pub const VERIFY_LIMIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    RealPart,
    ImagPart,
    Diagonal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementPlan {
    pauli: PauliString,
    star: Option<usize>,
    appended: Circuit,
    z_qubits: Vec<usize>,
    flip_qubits: Vec<usize>,
    mode: PlanMode,
    physical_cz: bool,
}

impl MeasurementPlan {
    pub fn pauli(&self) -> &PauliString {
        &self.pauli
    }

    /// `None` for diagonal plans.
    pub fn star(&self) -> Option<usize> {
        self.star
    }

    pub fn appended(&self) -> &Circuit {
        &self.appended
    }

    pub fn z_qubits(&self) -> &[usize] {
        &self.z_qubits
    }

    pub fn flip_qubits(&self) -> &[usize] {
        &self.flip_qubits
    }

    pub fn mode(&self) -> PlanMode {
        self.mode
    }

    /// Whether CZ gates are emitted instead of the classical sign.
    pub fn physical_cz(&self) -> bool {
        self.physical_cz
    }

    pub fn n_qubits(&self) -> usize {
        self.pauli.n_qubits()
    }

    pub fn two_qubit_gate_count(&self) -> usize {
        self.appended.gates().iter().filter(|g| g.is_two_qubit()).count()
    }

    /// Index mask flipped by [`tilde_partner`].
    pub fn flip_mask(&self) -> usize {
        let n = self.n_qubits();
        self.star.iter().chain(&self.flip_qubits).map(|&q| qubit_bit(n, q)).sum()
    }

    /// Index mask of qubits whose sign is applied classically.
    pub fn sign_mask(&self) -> usize {
        if self.physical_cz {
            return 0;
        }
        let n = self.n_qubits();
        self.z_qubits.iter().map(|&q| qubit_bit(n, q)).sum()
    }

    pub fn star_mask(&self) -> usize {
        self.star.map_or(0, |q| qubit_bit(self.n_qubits(), q))
    }

    /// `(1 − 2m_star)·z_sign(m)` for outcome index `m`: the per-shot sign
    /// multiplying the network factor in the off-diagonal estimator.
    #[inline]
    pub fn outcome_sign(&self, m: usize) -> f64 {
        let parity = (m & (self.star_mask() | self.sign_mask())).count_ones();
        if parity % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.appended.to_json()
    }
}

/// Lowest-index qubit carrying X or Y.
pub fn select_star(p: &PauliString) -> Result<usize> {
    p.ops()
        .iter()
        .position(|op| matches!(op, Pauli::X | Pauli::Y))
        .ok_or_else(|| Error::DiagonalString(p.to_string()))
}

/// Real-part circuit `V` with the default classical CZ handling.
pub fn build_v(p: &PauliString) -> Result<MeasurementPlan> {
    build_plan(p, PlanMode::RealPart, false)
}

/// Imaginary-part circuit `V'` with the default classical CZ handling.
pub fn build_v_prime(p: &PauliString) -> Result<MeasurementPlan> {
    build_plan(p, PlanMode::ImagPart, false)
}

/// Plan for a diagonal string: no appended gates, every support qubit is a
/// Z qubit.
pub fn diagonal_plan(p: &PauliString) -> Result<MeasurementPlan> {
    if !p.is_diagonal() {
        return Err(Error::PlanMismatch(format!("{p} is not diagonal")));
    }
    Ok(MeasurementPlan {
        pauli: p.clone(),
        star: None,
        appended: Circuit::new(p.n_qubits(), InitialState::Zeros)?,
        z_qubits: p.support(),
        flip_qubits: Vec::new(),
        mode: PlanMode::Diagonal,
        physical_cz: false,
    })
}

/// Builds `V` (`RealPart`) or `V'` (`ImagPart`). With `physical_cz`, a CZ
/// controlled by the star qubit is emitted for every Z qubit and
/// [`z_sign`] is identically `+1`.
pub fn build_plan(p: &PauliString, mode: PlanMode, physical_cz: bool) -> Result<MeasurementPlan> {
    if mode == PlanMode::Diagonal {
        return diagonal_plan(p);
    }
    let star = select_star(p)?;
    let n = p.n_qubits();
    let mut appended = Circuit::new(n, InitialState::Zeros)?;
    let mut z_qubits = Vec::new();
    let mut flip_qubits = Vec::new();
    for q in p.support() {
        if q == star {
            continue;
        }
        match p.op(q) {
            Pauli::X => {
                appended.push(Gate::Cx(star, q))?;
                flip_qubits.push(q);
            }
            Pauli::Y => {
                appended.push(Gate::Cy(star, q))?;
                flip_qubits.push(q);
            }
            Pauli::Z => {
                if physical_cz {
                    appended.push(Gate::Cz(star, q))?;
                }
                z_qubits.push(q);
            }
            Pauli::I => unreachable!(),
        }
    }
    let star_gate = match (mode, p.op(star)) {
        (PlanMode::RealPart, Pauli::X) | (PlanMode::ImagPart, Pauli::Y) => Gate::H(star),
        (PlanMode::RealPart, _) => Gate::Rx(star, Angle::Fixed(-FRAC_PI_4)),
        (PlanMode::ImagPart, _) => Gate::Rx(star, Angle::Fixed(FRAC_PI_4)),
        (PlanMode::Diagonal, _) => unreachable!(),
    };
    appended.push(star_gate)?;
    Ok(MeasurementPlan { pauli: p.clone(), star: Some(star), appended, z_qubits, flip_qubits, mode, physical_cz })
}

fn check_len(plan: &MeasurementPlan, s: Bitstring) -> Result<()> {
    if s.n_bits() != plan.n_qubits() {
        return Err(Error::Dimension(format!(
            "bitstring of length {} for a {}-qubit plan",
            s.n_bits(),
            plan.n_qubits()
        )));
    }
    Ok(())
}

/// `s` with the star bit and every flip-qubit bit inverted.
pub fn tilde_partner(plan: &MeasurementPlan, s: Bitstring) -> Result<Bitstring> {
    check_len(plan, s)?;
    Bitstring::new(s.n_bits(), s.index() ^ plan.flip_mask())
}

/// `Π_{j ∈ z_qubits} (1 − 2s_j)`; identically `+1` when CZ is physical.
pub fn z_sign(plan: &MeasurementPlan, s: Bitstring) -> Result<i8> {
    check_len(plan, s)?;
    Ok(if (s.index() & plan.sign_mask()).count_ones() % 2 == 0 { 1 } else { -1 })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenbasisReport {
    pub max_deviation: f64,
    pub outcomes_checked: usize,
}

/// Checks that `V†|m⟩` equals, up to a global phase, the expected
/// combination of `|a⟩` and `P|a⟩` where `a` is `m` with the star bit
/// cleared: `(|a⟩ + σP|a⟩)/√2` for `V` and `(−i|a⟩ − σP|a⟩)/√2` for `V'`,
/// with `σ = (1 − 2m_star)·z_sign(m)`. Exhaustive for n ≤ 6, otherwise 1000
/// seeded random outcomes.
pub fn verify_eigenbasis(plan: &MeasurementPlan) -> Result<EigenbasisReport> {
    let n = plan.n_qubits();
    if n > VERIFY_LIMIT {
        return Err(Error::TooLarge(n, VERIFY_LIMIT));
    }
    let dim = 1usize << n;
    let outcomes: Vec<usize> = if n <= 6 {
        (0..dim).collect()
    } else {
        let mut r = rng::from_seed(0xe16e);
        (0..1000).map(|_| r.random_range(0..dim)).collect()
    };
    let p = &plan.pauli;
    let (xm, zm, ny) = (p.x_mask(), p.z_mask(), p.y_count());
    let mut max_dev: f64 = 0.0;
    for &m in &outcomes {
        let mut got = Statevector::basis(Bitstring::new(n, m)?);
        plan.appended.apply_adjoint(&mut got, &[])?;
        let mut want = vec![C64::new(0.0, 0.0); dim];
        match plan.mode {
            PlanMode::Diagonal => want[m] = C64::new(1.0, 0.0),
            mode => {
                let a = m & !plan.star_mask();
                let sigma = plan.outcome_sign(m);
                let (b, ph) = p.act(a, xm, zm, ny);
                let (ca, cb) = match mode {
                    PlanMode::RealPart => (C64::new(1.0, 0.0), C64::new(sigma, 0.0)),
                    _ => (C64::new(0.0, -1.0), C64::new(-sigma, 0.0)),
                };
                want[a] += ca * std::f64::consts::FRAC_1_SQRT_2;
                want[b] += cb * ph.to_complex() * std::f64::consts::FRAC_1_SQRT_2;
            }
        }
        let overlap: C64 = want.iter().zip(got.amplitudes()).map(|(w, g)| w.conj() * g).sum();
        let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { C64::new(1.0, 0.0) };
        let dev = want
            .iter()
            .zip(got.amplitudes())
            .map(|(w, g)| (g - w * phase).norm())
            .fold(0.0, f64::max);
        max_dev = max_dev.max(dev);
    }
    Ok(EigenbasisReport { max_deviation: max_dev, outcomes_checked: outcomes.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::run_circuit;

    fn ps(text: &str, n: usize) -> PauliString {
        PauliString::parse(text, n).unwrap()
    }

    fn all_strings(n: usize) -> Vec<PauliString> {
        let ops = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
        (0..4usize.pow(n as u32))
            .map(|mut k| {
                let mut v = Vec::new();
                for _ in 0..n {
                    v.push(ops[k % 4]);
                    k /= 4;
                }
                PauliString::from_ops(v)
            })
            .collect()
    }

    #[test]
    fn star_selection() {
        assert_eq!(select_star(&ps("Y2 Z3 X4", 5)).unwrap(), 2);
        assert_eq!(select_star(&ps("X1 X2 Y3", 4)).unwrap(), 1);
        assert!(matches!(select_star(&ps("Z0 Z1", 2)), Err(Error::DiagonalString(_))));
    }

    #[test]
    fn emitted_gates() {
        assert_eq!(build_v(&ps("X0", 1)).unwrap().appended().gates(), &[Gate::H(0)]);
        let v = build_v(&ps("Y2 Z3 X4", 5)).unwrap();
        assert_eq!(v.appended().gates(), &[Gate::Cx(2, 4), Gate::Rx(2, Angle::Fixed(-FRAC_PI_4))]);
        assert_eq!(v.z_qubits(), &[3]);
        assert_eq!(v.flip_qubits(), &[4]);
        let v = build_v(&ps("X1 X2 Y3", 4)).unwrap();
        assert_eq!(v.appended().gates(), &[Gate::Cx(1, 2), Gate::Cy(1, 3), Gate::H(1)]);
        assert_eq!(
            build_v_prime(&ps("X0", 1)).unwrap().appended().gates(),
            &[Gate::Rx(0, Angle::Fixed(FRAC_PI_4))]
        );
        assert_eq!(build_v_prime(&ps("Y0", 1)).unwrap().appended().gates(), &[Gate::H(0)]);
        let (a, b) = (build_v(&ps("X0 Y1", 2)).unwrap(), build_v_prime(&ps("X0 Y1", 2)).unwrap());
        let n = a.appended().gates().len();
        assert_eq!(a.appended().gates()[..n - 1], b.appended().gates()[..n - 1]);
        assert!(build_v(&ps("Z0", 1)).is_err());
    }

    #[test]
    fn partner_and_sign() {
        let v = build_v(&ps("X0", 1)).unwrap();
        assert_eq!(tilde_partner(&v, Bitstring::parse("0").unwrap()).unwrap().to_string(), "1");
        let v = build_v(&ps("Y2 Z3 X4", 5)).unwrap();
        let s = Bitstring::parse("00000").unwrap();
        let t = tilde_partner(&v, s).unwrap();
        assert_eq!(t.to_string(), "00101");
        assert_eq!(tilde_partner(&v, t).unwrap(), s);
        assert_eq!(z_sign(&v, Bitstring::parse("00010").unwrap()).unwrap(), -1);
        assert_eq!(z_sign(&v, Bitstring::parse("11101").unwrap()).unwrap(), 1);
        let w = build_v(&ps("X0 Z1 Z2", 3)).unwrap();
        assert_eq!(z_sign(&w, Bitstring::parse("011").unwrap()).unwrap(), 1);
        assert!(tilde_partner(&v, Bitstring::parse("00").unwrap()).is_err());
        assert!(z_sign(&v, Bitstring::parse("00").unwrap()).is_err());
        let physical = build_plan(&ps("Y2 Z3 X4", 5), PlanMode::RealPart, true).unwrap();
        assert_eq!(z_sign(&physical, Bitstring::parse("00010").unwrap()).unwrap(), 1);
    }

    #[test]
    fn gate_count_and_partition_of_support() {
        for p in all_strings(3).into_iter().filter(|p| !p.is_diagonal()) {
            let v = build_v(&p).unwrap();
            assert_eq!(v.two_qubit_gate_count(), p.weight_xy() - 1);
            let mut all: Vec<usize> = v.z_qubits().iter().chain(v.flip_qubits()).copied().collect();
            all.push(v.star().unwrap());
            all.sort_unstable();
            assert_eq!(all, p.support());
        }
    }

    #[test]
    fn eigenbasis_exhaustive_three_qubits() {
        for p in all_strings(3).into_iter().filter(|p| !p.is_diagonal()) {
            for mode in [PlanMode::RealPart, PlanMode::ImagPart] {
                for cz in [false, true] {
                    let plan = build_plan(&p, mode, cz).unwrap();
                    let rep = verify_eigenbasis(&plan).unwrap();
                    assert!(rep.max_deviation < 1e-10, "{p} {mode:?} cz={cz}: {}", rep.max_deviation);
                }
            }
        }
    }

    #[test]
    fn eigenbasis_examples() {
        assert!(verify_eigenbasis(&build_v(&ps("X0", 1)).unwrap()).unwrap().max_deviation < 1e-12);
        assert!(verify_eigenbasis(&build_v(&ps("Y2 Z3 X4", 5)).unwrap()).unwrap().max_deviation < 1e-10);
        let big = build_v(&PauliString::parse("X0 Y5 Z7", 8).unwrap()).unwrap();
        let rep = verify_eigenbasis(&big).unwrap();
        assert_eq!(rep.outcomes_checked, 1000);
        assert!(rep.max_deviation < 1e-10);
        let huge = build_v(&PauliString::parse("X0", 11).unwrap()).unwrap();
        assert!(verify_eigenbasis(&huge).is_err());
    }

    #[test]
    fn reconstructed_vectors_are_orthonormal() {
        let plan = build_v(&ps("Y0 X1 Z2", 3)).unwrap();
        let cols: Vec<Statevector> = (0..8)
            .map(|m| {
                let mut s = Statevector::basis(Bitstring::new(3, m).unwrap());
                plan.appended().apply_adjoint(&mut s, &[]).unwrap();
                s
            })
            .collect();
        for i in 0..8 {
            for j in 0..8 {
                let ip = cols[i].inner_product(&cols[j]).unwrap();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - C64::new(want, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn probability_partition() {
        let p = ps("X0 Z1 Y2", 3);
        let plan = build_v(&p).unwrap();
        let mut prep = Circuit::new(3, InitialState::Zeros).unwrap();
        for q in 0..3 {
            prep.push(Gate::Rx(q, Angle::Fixed(0.3 + q as f64))).unwrap();
            prep.push(Gate::Rz(q, Angle::Fixed(0.7 * q as f64 + 0.1))).unwrap();
        }
        prep.push(Gate::Cx(0, 2)).unwrap();
        let psi = run_circuit(&prep, &[]).unwrap();
        let mut vpsi = psi.clone();
        plan.appended().apply_to(&mut vpsi, &[], None).unwrap();
        for a in 0..8usize {
            if a & plan.star_mask() != 0 {
                continue;
            }
            let b = a ^ plan.flip_mask();
            let lhs = vpsi.probabilities()[a] + vpsi.probabilities()[a | plan.star_mask()];
            let rhs = psi.probabilities()[a] + psi.probabilities()[b];
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
