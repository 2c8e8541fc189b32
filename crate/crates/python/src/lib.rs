//! Python bindings. Structured values cross the boundary as JSON strings,
//! amplitudes as lists of Python complex numbers.

use num_complex::Complex64 as C64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use vqnhe::ansatz::{AnsatzSpec, Family};
use vqnhe::bench::{run_benchmark, RunSpec, TrainedModel};
use vqnhe::estimate::{estimate_energy, EstimateOptions, Mode, ShotPlan, DEFAULT_SHOTS};
use vqnhe::measure::{build_plan, diagonal_plan, PlanMode};
use vqnhe::pauli::{self, Boundary, Hamiltonian, PauliString};
use vqnhe::qsim::{Bitstring, Circuit};

fn err(e: vqnhe::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn boundary(name: &str) -> PyResult<Boundary> {
    match name {
        "periodic" => Ok(Boundary::Periodic),
        "open" => Ok(Boundary::Open),
        _ => Err(PyValueError::new_err(format!("unknown boundary {name:?}"))),
    }
}

/// Hamiltonian text for a builtin model (`tfim` or `heisenberg`).
#[pyfunction]
#[pyo3(signature = (builder, n_qubits, boundary = "periodic"))]
fn build_model(builder: &str, n_qubits: usize, boundary: &str) -> PyResult<String> {
    let b = self::boundary(boundary)?;
    let h = match builder {
        "tfim" => pauli::build_tfim(n_qubits, b),
        "heisenberg" => pauli::build_heisenberg(n_qubits, b),
        _ => return Err(PyValueError::new_err(format!("unknown builder {builder:?}"))),
    }
    .map_err(err)?;
    Ok(pauli::serialize_hamiltonian(&h))
}

/// Ground energy and ground state of a Hamiltonian given in text form.
#[pyfunction]
fn exact_ground(hamiltonian: &str) -> PyResult<(f64, Vec<C64>)> {
    let h = pauli::parse_hamiltonian(hamiltonian).map_err(err)?;
    let (e, psi) = pauli::exact_ground(&h).map_err(err)?;
    Ok((e, psi.into_amplitudes()))
}

/// `P|bits⟩ = phase·|out⟩`, returned as `(out, phase)`.
#[pyfunction]
fn apply_pauli(pauli: &str, bits: &str) -> PyResult<(String, C64)> {
    let s = Bitstring::parse(bits).map_err(err)?;
    let p = PauliString::parse(pauli, s.n_bits()).map_err(err)?;
    let act = pauli::apply_to_basis(&p, s).map_err(err)?;
    Ok((act.out.to_string(), act.phase.to_complex()))
}

/// Circuit JSON of an ansatz family.
#[pyfunction]
#[pyo3(signature = (family, n_qubits, depth = 1, init = None))]
fn ansatz(family: &str, n_qubits: usize, depth: usize, init: Option<&str>) -> PyResult<String> {
    let family: Family = family.parse().map_err(err)?;
    let mut spec = AnsatzSpec::new(family, n_qubits, depth);
    if let Some(b) = init {
        spec = spec.with_init(b);
    }
    spec.build().and_then(|c| c.to_json()).map_err(err)
}

/// Final amplitudes of a circuit (JSON) at the given parameters.
#[pyfunction]
fn run_circuit(circuit: &str, params: Vec<f64>) -> PyResult<Vec<C64>> {
    let c = Circuit::from_json(circuit).map_err(err)?;
    Ok(c.run_shifted(&params, None).map_err(err)?.into_amplitudes())
}

/// Measurement plan JSON of a Pauli string.
#[pyfunction]
#[pyo3(signature = (pauli, n_qubits, imag = false, physical_cz = false))]
fn plan(pauli: &str, n_qubits: usize, imag: bool, physical_cz: bool) -> PyResult<String> {
    let p = PauliString::parse(pauli, n_qubits).map_err(err)?;
    let plan = if p.is_diagonal() {
        diagonal_plan(&p)
    } else {
        build_plan(&p, if imag { PlanMode::ImagPart } else { PlanMode::RealPart }, physical_cz)
    }
    .map_err(err)?;
    plan.to_json().map_err(err)
}

/// Energy estimate (JSON) at a saved checkpoint.
#[pyfunction]
#[pyo3(signature = (checkpoint, mode = "exact", shots = DEFAULT_SHOTS, seed = 0))]
fn estimate(checkpoint: &str, mode: &str, shots: u64, seed: u64) -> PyResult<String> {
    let run = || -> vqnhe::Result<String> {
        let model = TrainedModel::load(checkpoint)?;
        let h: Hamiltonian = model.model.build()?;
        let circuit = model.ansatz.build()?;
        let f = model.postprocessor()?;
        let mode: Mode = mode.parse()?;
        let mut opts = EstimateOptions::new(mode);
        opts.seed = seed;
        if mode == Mode::Sampled {
            opts.shots = Some(ShotPlan::uniform(&h, shots)?);
        }
        let r = estimate_energy(&circuit, &model.theta, f.as_ref(), &h, &opts)?;
        Ok(serde_json::to_string(&r)?)
    };
    run().map_err(err)
}

/// Runs a benchmark from a RunSpec JSON and returns its result record JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<String> {
    let spec = RunSpec::from_json(config).map_err(err)?;
    let outcome = py.detach(|| run_benchmark(&spec)).map_err(err)?;
    serde_json::to_string(&outcome.record).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn vqnhe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(build_model, m)?)?;
    m.add_function(wrap_pyfunction!(exact_ground, m)?)?;
    m.add_function(wrap_pyfunction!(apply_pauli, m)?)?;
    m.add_function(wrap_pyfunction!(ansatz, m)?)?;
    m.add_function(wrap_pyfunction!(run_circuit, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
