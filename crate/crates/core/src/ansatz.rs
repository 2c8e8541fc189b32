//! Circuit families used by the benchmarks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{Bitstring, Circuit, Gate, InitialState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    TfimQaoa,
    HeisenbergSwap,
    HardwareEfficient,
    /// Single-entangler circuit for the 5-site open TFIM: RX, RZ layers, one
    /// `e^{iθZZ}` layer on open bonds, RX, RZ layers.
    Tfim5Supp,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tfim_qaoa" => Ok(Family::TfimQaoa),
            "heisenberg_swap" => Ok(Family::HeisenbergSwap),
            "hardware_efficient" => Ok(Family::HardwareEfficient),
            "tfim5_supp" => Ok(Family::Tfim5Supp),
            _ => Err(Error::Unknown { kind: "ansatz family", name: s.to_string() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    pub family: Family,
    pub n_qubits: usize,
    #[serde(default = "one")]
    pub depth: usize,
    /// Initial bitstring for `hardware_efficient`; all zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
}

fn one() -> usize {
    1
}

impl AnsatzSpec {
    pub fn new(family: Family, n_qubits: usize, depth: usize) -> Self {
        Self { family, n_qubits, depth, init: None }
    }

    pub fn with_init(mut self, bits: &str) -> Self {
        self.init = Some(bits.to_string());
        self
    }

    pub fn build(&self) -> Result<Circuit> {
        match self.family {
            Family::TfimQaoa => tfim_qaoa(self.n_qubits, self.depth),
            Family::HeisenbergSwap => heisenberg_swap(self.n_qubits, self.depth),
            Family::HardwareEfficient => {
                let init = match &self.init {
                    Some(b) => Bitstring::parse(b)?,
                    None => Bitstring::zeros(self.n_qubits),
                };
                hardware_efficient(self.n_qubits, self.depth, init)
            }
            Family::Tfim5Supp => tfim5_supp(self.n_qubits),
        }
    }

    pub fn param_count(&self) -> usize {
        let (n, p) = (self.n_qubits, self.depth);
        match self.family {
            Family::TfimQaoa => 2 * n * p,
            Family::HeisenbergSwap => n * p,
            Family::HardwareEfficient => 2 * n * p,
            Family::Tfim5Supp => 5 * n - 1,
        }
    }
}

fn check_depth(p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::config("depth must be at least 1"));
    }
    Ok(())
}

/// Hadamard layer, then `p` blocks of periodic `e^{iθZZ}` bonds followed by
/// `e^{iθX}` on every qubit, each gate with its own parameter.
pub fn tfim_qaoa(n: usize, p: usize) -> Result<Circuit> {
    if n < 3 {
        return Err(Error::config(format!("tfim_qaoa needs n >= 3, got {n}")));
    }
    check_depth(p)?;
    let mut c = Circuit::new(n, InitialState::Zeros)?;
    for q in 0..n {
        c.push(Gate::H(q))?;
    }
    for _ in 0..p {
        for i in 0..n {
            let a = c.new_slot();
            c.push(Gate::ExpZz(i, (i + 1) % n, a))?;
        }
        for i in 0..n {
            let a = c.new_slot();
            c.push(Gate::Rx(i, a))?;
        }
    }
    Ok(c)
}

/// Singlet pairs on `(0,1), (2,3), …`, then `p` layers of `e^{iθ·SWAP}` on
/// the periodic bonds `(i, i+1 mod n)`.
pub fn heisenberg_swap(n: usize, p: usize) -> Result<Circuit> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::config(format!("heisenberg_swap needs an even n >= 4, got {n}")));
    }
    check_depth(p)?;
    let mut c = Circuit::new(n, InitialState::BellPairs)?;
    for _ in 0..p {
        for i in 0..n {
            let a = c.new_slot();
            c.push(Gate::ExpSwap(i, (i + 1) % n, a))?;
        }
    }
    Ok(c)
}

/// From `|init⟩`, `depth` blocks of an RX layer, an RZ layer and a CNOT
/// ladder `(i, i+1)` for ascending `i`.
pub fn hardware_efficient(n: usize, depth: usize, init: Bitstring) -> Result<Circuit> {
    if n < 2 {
        return Err(Error::config(format!("hardware_efficient needs n >= 2, got {n}")));
    }
    check_depth(depth)?;
    if init.n_bits() != n {
        return Err(Error::Dimension(format!("initial bitstring {init} for {n} qubits")));
    }
    let mut c = Circuit::new(n, InitialState::Bits(init))?;
    for _ in 0..depth {
        for q in 0..n {
            let a = c.new_slot();
            c.push(Gate::Rx(q, a))?;
        }
        for q in 0..n {
            let a = c.new_slot();
            c.push(Gate::Rz(q, a))?;
        }
        for q in 0..n - 1 {
            c.push(Gate::Cx(q, q + 1))?;
        }
    }
    Ok(c)
}

/// RX, RZ layers, `e^{iθZZ}` on the open bonds, RX, RZ layers; `5n − 1`
/// parameters.
pub fn tfim5_supp(n: usize) -> Result<Circuit> {
    if n < 2 {
        return Err(Error::config(format!("tfim5_supp needs n >= 2, got {n}")));
    }
    let mut c = Circuit::new(n, InitialState::Zeros)?;
    let rotations = |c: &mut Circuit| -> Result<()> {
        for q in 0..n {
            let a = c.new_slot();
            c.push(Gate::Rx(q, a))?;
        }
        for q in 0..n {
            let a = c.new_slot();
            c.push(Gate::Rz(q, a))?;
        }
        Ok(())
    };
    rotations(&mut c)?;
    for i in 0..n - 1 {
        let a = c.new_slot();
        c.push(Gate::ExpZz(i, i + 1, a))?;
    }
    rotations(&mut c)?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{build_heisenberg, dense_matrix, Boundary};
    use crate::qsim::run_circuit;
    use num_complex::Complex64 as C64;

    #[test]
    fn parameter_counts() {
        assert_eq!(tfim_qaoa(12, 2).unwrap().n_params(), 48);
        assert_eq!(heisenberg_swap(12, 2).unwrap().n_params(), 24);
        assert_eq!(hardware_efficient(4, 2, Bitstring::zeros(4)).unwrap().n_params(), 16);
        assert_eq!(tfim5_supp(5).unwrap().n_params(), 24);
        for family in [Family::TfimQaoa, Family::HeisenbergSwap, Family::HardwareEfficient, Family::Tfim5Supp] {
            for (n, p) in [(4, 1), (6, 3), (8, 2)] {
                let spec = AnsatzSpec::new(family, n, p);
                let c = spec.build().unwrap();
                c.validate().unwrap();
                assert_eq!(c.n_params(), spec.param_count());
            }
        }
    }

    #[test]
    fn errors() {
        assert!(tfim_qaoa(2, 1).is_err());
        assert!(heisenberg_swap(5, 1).is_err());
        assert!(heisenberg_swap(2, 1).is_err());
        assert!(hardware_efficient(4, 1, Bitstring::zeros(3)).is_err());
        assert!(tfim_qaoa(4, 0).is_err());
        assert!("qaoa".parse::<Family>().is_err());
    }

    #[test]
    fn qaoa_gate_order_and_zero_state() {
        let c = tfim_qaoa(4, 1).unwrap();
        let kinds: Vec<&str> = c.gates().iter().map(|g| g.kind()).collect();
        assert_eq!(kinds, [["H"; 4], ["EXP_ZZ"; 4], ["RX"; 4]].concat());
        let psi = run_circuit(&c, &vec![0.0; 8]).unwrap();
        assert!(psi.amplitudes().iter().all(|a| (a - C64::new(0.25, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn cnot_ladders_reach_hartree_fock_string() {
        let c = hardware_efficient(10, 4, Bitstring::parse("1110100101").unwrap()).unwrap();
        let psi = run_circuit(&c, &[0.0; 80]).unwrap();
        let want = Bitstring::parse("1110011100").unwrap();
        assert!((psi.amplitude(want).norm() - 1.0).abs() < 1e-12);
        let c = hardware_efficient(4, 2, Bitstring::parse("1000").unwrap()).unwrap();
        let psi = run_circuit(&c, &[0.0; 16]).unwrap();
        assert!((psi.amplitude(Bitstring::parse("1010").unwrap()).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn swap_ansatz_zero_state_is_singlet_product() {
        let c = heisenberg_swap(4, 1).unwrap();
        let psi = run_circuit(&c, &[0.0; 4]).unwrap();
        let h = build_heisenberg(4, Boundary::Open).unwrap();
        let m = dense_matrix(&h).unwrap();
        let v = nalgebra::DVector::from_column_slice(psi.amplitudes());
        // Open chain on 4 sites: two singlet bonds at −3, the middle bond at 0.
        assert!(((v.adjoint() * &m * &v)[(0, 0)].re + 6.0).abs() < 1e-12);
    }

    #[test]
    fn swap_ansatz_preserves_total_spin() {
        let n = 4;
        // S² = Σ_{i,j} S_i·S_j with S = σ/2.
        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                for p in [crate::pauli::Pauli::X, crate::pauli::Pauli::Y, crate::pauli::Pauli::Z] {
                    terms.push(crate::pauli::PauliTerm {
                        coeff: 0.25,
                        string: crate::pauli::PauliString::from_sparse(n, &[(i, p), (j, p)]).unwrap(),
                    });
                }
            }
        }
        terms.push(crate::pauli::PauliTerm {
            coeff: 0.75 * n as f64,
            string: crate::pauli::PauliString::identity(n),
        });
        let s2 = crate::pauli::Hamiltonian::new(n, terms).unwrap().compile();
        let c = heisenberg_swap(n, 3).unwrap();
        for seed in 0..5 {
            let params: Vec<f64> = (0..12).map(|k| ((k * 7 + seed * 13) % 11) as f64 * 0.3 - 1.4).collect();
            let psi = run_circuit(&c, &params).unwrap();
            let mut out = vec![C64::new(0.0, 0.0); 16];
            s2.apply(psi.amplitudes(), &mut out);
            assert!(out.iter().map(|x| x.norm()).fold(0.0, f64::max) < 1e-12);
        }
    }

    #[test]
    fn spec_json() {
        let spec: AnsatzSpec =
            serde_json::from_str(r#"{"family":"hardware_efficient","n_qubits":4,"depth":2,"init":"1000"}"#).unwrap();
        assert_eq!(spec.build().unwrap().n_params(), 16);
        let back: AnsatzSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
