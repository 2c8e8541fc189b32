//! VQNHE energy estimation: exact statevector evaluation, the analytic
//! infinite-shot limit of the measurement protocol, and finite-shot sampling.
//!
//! The energy of `ψ_f(s) = f(s)·ψ(s)` is `n/d` with `d = E_U[|f|²]`. Diagonal
//! terms contribute `E_U[|f|²·Π_Z(1−2s_j)]`; each off-diagonal term is read
//! from samples of `V·U` (real part) and, for complex `f`, `V'·U`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{build_plan, MeasurementPlan, PlanMode};
use crate::pauli::{CompiledHamiltonian, Hamiltonian, PauliTerm};
use crate::postproc::Postprocessor;
use crate::qsim::{run_circuit, sample_with, Circuit, SampleBatch, Statevector};
use crate::rng;

/// Denominators at or below this are rejected.
pub const MIN_DENOMINATOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    InfiniteShot,
    Sampled,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "infinite_shot" | "infinite" => Ok(Mode::InfiniteShot),
            "sampled" => Ok(Mode::Sampled),
            _ => Err(Error::Unknown { kind: "mode", name: s.to_string() }),
        }
    }
}

/// Measurement outcomes of one basis: either a finite sample or the exact
/// outcome distribution (the infinite-shot limit).
#[derive(Clone, Debug)]
pub enum Outcomes {
    Sampled(SampleBatch),
    Exact { n_qubits: usize, probs: Vec<f64> },
}

impl Outcomes {
    pub fn exact(state: &Statevector) -> Self {
        Outcomes::Exact { n_qubits: state.n_qubits(), probs: state.probabilities() }
    }

    pub fn n_qubits(&self) -> usize {
        match self {
            Outcomes::Sampled(b) => b.n_qubits(),
            Outcomes::Exact { n_qubits, .. } => *n_qubits,
        }
    }

    pub fn shots(&self) -> u64 {
        match self {
            Outcomes::Sampled(b) => b.total_shots(),
            Outcomes::Exact { .. } => 0,
        }
    }

    /// Mean of `g` and its standard error (zero in the exact limit).
    pub fn mean<G: Fn(usize) -> f64>(&self, g: G) -> Result<(f64, f64)> {
        match self {
            Outcomes::Exact { probs, .. } => {
                let mut acc = 0.0;
                for (m, &p) in probs.iter().enumerate() {
                    if p != 0.0 {
                        acc += p * g(m);
                    }
                }
                Ok((acc, 0.0))
            }
            Outcomes::Sampled(batch) => {
                let n = batch.total_shots();
                if n == 0 {
                    return Err(Error::EmptyBatch);
                }
                let (mut sum, mut sq) = (0.0, 0.0);
                for (&m, &c) in batch.counts() {
                    let v = g(m);
                    sum += c as f64 * v;
                    sq += c as f64 * v * v;
                }
                let nf = n as f64;
                let mean = sum / nf;
                let var = if n > 1 { ((sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
                Ok((mean, (var / nf).sqrt()))
            }
        }
    }
}

fn check_width(out: &Outcomes, f: &dyn Postprocessor) -> Result<()> {
    if out.n_qubits() != f.n_bits() {
        return Err(Error::Dimension(format!(
            "{}-qubit outcomes for a {}-bit post-processor",
            out.n_qubits(),
            f.n_bits()
        )));
    }
    Ok(())
}

/// `E_U[|f(s)|²]` with its standard error.
pub fn denominator_estimate(batch: &Outcomes, f: &dyn Postprocessor) -> Result<(f64, f64)> {
    check_width(batch, f)?;
    batch.mean(|s| f.eval(s).norm_sqr())
}

/// `coeff·E_U[|f(s)|²·Π_Z(1−2s_j)]` with its standard error.
pub fn diagonal_term_estimate(batch: &Outcomes, f: &dyn Postprocessor, term: &PauliTerm) -> Result<(f64, f64)> {
    check_width(batch, f)?;
    if !term.string.is_diagonal() {
        return Err(Error::PlanMismatch(format!("{} is not diagonal", term.string)));
    }
    let zm = term.string.z_mask();
    let (m, e) = batch.mean(|s| f.eval(s).norm_sqr() * parity_sign(s & zm))?;
    Ok((term.coeff * m, term.coeff.abs() * e))
}

#[inline]
fn parity_sign(x: usize) -> f64 {
    if x.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Per-shot value `σ(m)·Re(conj f(a)·f(b))` (or `Im` for a `V'` batch), where
/// `a` is `m` with the star bit cleared, `b = tilde(a)` and
/// `σ = (1 − 2m_star)·z_sign(m)`.
#[inline]
fn offdiag_sample(plan: &MeasurementPlan, f: &dyn Postprocessor, m: usize) -> f64 {
    let a = m & !plan.star_mask();
    let b = a ^ plan.flip_mask();
    let prod = f.eval(a).conj() * f.eval(b);
    let part = if plan.mode() == PlanMode::ImagPart { prod.im } else { prod.re };
    plan.outcome_sign(m) * part
}

/// `coeff·E_{VU}[σ·Re(conj f(a)·f(b))]` (real-part plan) or the analogous
/// imaginary part (`V'` plan), with its standard error.
pub fn offdiagonal_term_estimate(
    batch: &Outcomes,
    f: &dyn Postprocessor,
    plan: &MeasurementPlan,
    term: &PauliTerm,
) -> Result<(f64, f64)> {
    check_width(batch, f)?;
    if plan.pauli() != &term.string || plan.mode() == PlanMode::Diagonal {
        return Err(Error::PlanMismatch(format!("plan for {} used with term {}", plan.pauli(), term.string)));
    }
    let (m, e) = batch.mean(|m| offdiag_sample(plan, f, m))?;
    Ok((term.coeff * m, term.coeff.abs() * e))
}

/// `ψ_f(s) = f(s)·ψ(s)`.
pub fn postprocessed(psi: &Statevector, f: &dyn Postprocessor) -> Result<Vec<C64>> {
    if psi.n_qubits() != f.n_bits() {
        return Err(Error::Dimension(format!("{}-qubit state, {}-bit post-processor", psi.n_qubits(), f.n_bits())));
    }
    Ok(psi.amplitudes().iter().enumerate().map(|(s, a)| f.eval(s) * a).collect())
}

/// `(⟨ψ_f|H|ψ_f⟩, ⟨ψ_f|ψ_f⟩)` from a statevector.
pub fn exact_parts(psi: &Statevector, f: &dyn Postprocessor, h: &CompiledHamiltonian) -> Result<(f64, f64)> {
    if h.n_qubits() != psi.n_qubits() {
        return Err(Error::Dimension("Hamiltonian and state widths differ".into()));
    }
    let pf = postprocessed(psi, f)?;
    let d: f64 = pf.iter().map(|a| a.norm_sqr()).sum();
    if !(d > MIN_DENOMINATOR) {
        return Err(Error::DegenerateDenominator(d));
    }
    Ok((h.expectation(&pf), d))
}

/// Rayleigh quotient of `ψ_f` for `ψ = U(θ)|init⟩`.
pub fn exact_energy(circuit: &Circuit, params: &[f64], f: &dyn Postprocessor, h: &Hamiltonian) -> Result<f64> {
    if h.n_qubits() > crate::pauli::DENSE_LIMIT {
        return Err(Error::TooLarge(h.n_qubits(), crate::pauli::DENSE_LIMIT));
    }
    let psi = run_circuit(circuit, params)?;
    let (n, d) = exact_parts(&psi, f, &h.compile())?;
    Ok(n / d)
}

/// Shot counts: one batch of `U` for the denominator and diagonal terms,
/// one per off-diagonal term (in Hamiltonian order) for `V·U`. A complex
/// post-processor repeats each off-diagonal count for `V'·U`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotPlan {
    pub denominator: u64,
    pub per_term: Vec<u64>,
}

impl ShotPlan {
    pub fn new(denominator: u64, per_term: Vec<u64>) -> Result<Self> {
        if denominator == 0 || per_term.contains(&0) {
            return Err(Error::config("every shot count must be at least 1"));
        }
        Ok(Self { denominator, per_term })
    }

    /// Equal shots for every measurement basis of `h`.
    pub fn uniform(h: &Hamiltonian, shots: u64) -> Result<Self> {
        let k = h.terms().iter().filter(|t| !t.string.is_diagonal()).count();
        Self::new(shots, vec![shots; k])
    }

    pub fn total(&self) -> u64 {
        self.denominator + self.per_term.iter().sum::<u64>()
    }
}

/// `⌈9r⁴/(4ε²)⌉` shots guarantee relative accuracy `ε` for `f ∈ [1/r, r]`.
pub fn shot_bound(r: f64, eps: f64) -> Result<u64> {
    if !(r >= 1.0) || !(eps > 0.0) || !r.is_finite() || !eps.is_finite() {
        return Err(Error::config(format!("shot_bound needs r >= 1 and eps > 0, got r={r}, eps={eps}")));
    }
    let x = 9.0 * r.powi(4) / (4.0 * eps * eps);
    // Absorb rounding in values such as 0.015² so exact integers stay exact.
    let nearest = x.round();
    let n = if (x - nearest).abs() <= 1e-9 * x.max(1.0) { nearest } else { x.ceil() };
    Ok(n.max(1.0) as u64)
}

/// `3r²/(2√N)`.
pub fn stderr_bound(r: f64, shots: u64) -> Result<f64> {
    if shots == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(3.0 * r * r / (2.0 * (shots as f64).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Identity,
    Diagonal,
    RealPart,
    ImagPart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub pauli: String,
    pub coeff: f64,
    pub kind: TermKind,
    /// Contribution to the numerator.
    pub value: f64,
    pub stderr: f64,
    pub shots: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub value: f64,
    pub stderr: f64,
    #[serde(rename = "shots")]
    pub shots_used: u64,
    #[serde(rename = "terms")]
    pub per_term: Vec<TermEstimate>,
    pub numerator: f64,
    pub denominator: f64,
}

#[derive(Clone, Debug)]
pub struct EstimateOptions {
    pub mode: Mode,
    /// Defaults to 8192 shots per basis when absent.
    pub shots: Option<ShotPlan>,
    pub seed: u64,
    /// Emit CZ gates instead of the classical Z sign.
    pub physical_cz: bool,
}

impl EstimateOptions {
    pub fn new(mode: Mode) -> Self {
        Self { mode, shots: None, seed: 0, physical_cz: false }
    }

    pub fn sampled(shots: ShotPlan, seed: u64) -> Self {
        Self { mode: Mode::Sampled, shots: Some(shots), seed, physical_cz: false }
    }
}

pub const DEFAULT_SHOTS: u64 = 8192;

/// Energy of `ψ_f` for `ψ = U(θ)|init⟩` in the requested mode.
pub fn estimate_energy(
    circuit: &Circuit,
    params: &[f64],
    f: &dyn Postprocessor,
    h: &Hamiltonian,
    opts: &EstimateOptions,
) -> Result<EstimationResult> {
    if circuit.n_qubits() != h.n_qubits() {
        return Err(Error::Dimension(format!(
            "circuit on {} qubits, Hamiltonian on {}",
            circuit.n_qubits(),
            h.n_qubits()
        )));
    }
    let psi = run_circuit(circuit, params)?;
    estimate_state(&psi, f, h, opts)
}

/// [`estimate_energy`] for an already prepared state `ψ`.
pub fn estimate_state(
    psi: &Statevector,
    f: &dyn Postprocessor,
    h: &Hamiltonian,
    opts: &EstimateOptions,
) -> Result<EstimationResult> {
    let n = h.n_qubits();
    if psi.n_qubits() != n || f.n_bits() != n {
        return Err(Error::Dimension(format!(
            "state {} qubits, post-processor {} bits, Hamiltonian {} qubits",
            psi.n_qubits(),
            f.n_bits(),
            n
        )));
    }
    if opts.mode == Mode::Exact {
        if n > crate::pauli::DENSE_LIMIT {
            return Err(Error::TooLarge(n, crate::pauli::DENSE_LIMIT));
        }
        let (num, den) = exact_parts(psi, f, &h.compile())?;
        return Ok(EstimationResult {
            value: num / den,
            stderr: 0.0,
            shots_used: 0,
            per_term: Vec::new(),
            numerator: num,
            denominator: den,
        });
    }
    let f_table = crate::postproc::Table::of(f);
    let data = collect_measurements(psi, h, f.is_complex(), opts)?;
    data.estimate(&f_table)
}

/// Outcomes of one protocol run: the shared `U` batch plus one batch per
/// off-diagonal term and part.
#[derive(Clone, Debug)]
pub struct MeasurementData {
    pub diagonal_terms: Vec<PauliTerm>,
    pub u_batch: Outcomes,
    pub offdiagonal: Vec<(PauliTerm, MeasurementPlan, Outcomes)>,
}

/// Samples (or, in infinite-shot mode, exactly evaluates) every batch the
/// protocol needs for `h`. `complex_f` adds the `V'` batches.
pub fn collect_measurements(
    psi: &Statevector,
    h: &Hamiltonian,
    complex_f: bool,
    opts: &EstimateOptions,
) -> Result<MeasurementData> {
    if opts.mode == Mode::Exact {
        return Err(Error::config("exact mode has no measurement batches"));
    }
    let sampled = opts.mode == Mode::Sampled;
    let plan = match &opts.shots {
        Some(p) => p.clone(),
        None => ShotPlan::uniform(h, DEFAULT_SHOTS)?,
    };
    let offdiag: Vec<&PauliTerm> = h.terms().iter().filter(|t| !t.string.is_diagonal()).collect();
    if plan.per_term.len() != offdiag.len() {
        return Err(Error::config(format!(
            "shot plan lists {} off-diagonal terms, Hamiltonian has {}",
            plan.per_term.len(),
            offdiag.len()
        )));
    }
    let gather = |state: &Statevector, shots: u64, stream: u64| -> Result<Outcomes> {
        if sampled {
            let mut r = rng::substream(opts.seed, stream);
            Ok(Outcomes::Sampled(sample_with(state, shots, &mut r)?))
        } else {
            Ok(Outcomes::exact(state))
        }
    };
    let u_batch = gather(psi, plan.denominator, 0)?;
    let modes: &[PlanMode] =
        if complex_f { &[PlanMode::RealPart, PlanMode::ImagPart] } else { &[PlanMode::RealPart] };
    let mut offdiagonal = Vec::new();
    for (k, t) in offdiag.iter().enumerate() {
        for (j, &mode) in modes.iter().enumerate() {
            let mplan = build_plan(&t.string, mode, opts.physical_cz)?;
            let mut state = psi.clone();
            mplan.appended().apply_to(&mut state, &[], None)?;
            let batch = gather(&state, plan.per_term[k], 1 + 2 * k as u64 + j as u64)?;
            offdiagonal.push(((*t).clone(), mplan, batch));
        }
    }
    let diagonal_terms = h.terms().iter().filter(|t| t.string.is_diagonal()).cloned().collect();
    Ok(MeasurementData { diagonal_terms, u_batch, offdiagonal })
}

impl MeasurementData {
    /// Assembles the energy estimate with first-order error propagation.
    pub fn estimate(&self, f: &dyn Postprocessor) -> Result<EstimationResult> {
        let (den, den_err) = denominator_estimate(&self.u_batch, f)?;
        if !(den > MIN_DENOMINATOR) {
            return Err(Error::DegenerateDenominator(den));
        }
        let mut per_term = Vec::new();
        let mut num = 0.0;
        for t in &self.diagonal_terms {
            let (v, e) = diagonal_term_estimate(&self.u_batch, f, t)?;
            num += v;
            per_term.push(TermEstimate {
                pauli: t.string.to_string(),
                coeff: t.coeff,
                kind: if t.string.is_identity() { TermKind::Identity } else { TermKind::Diagonal },
                value: v,
                stderr: e,
                shots: self.u_batch.shots(),
            });
        }
        // Diagonal terms share one batch, so their error is that of the summed
        // per-shot quantity rather than a sum of independent errors.
        let diag_err = if self.diagonal_terms.is_empty() {
            0.0
        } else {
            let masks: Vec<(f64, usize)> =
                self.diagonal_terms.iter().map(|t| (t.coeff, t.string.z_mask())).collect();
            self.u_batch
                .mean(|s| {
                    let w = f.eval(s).norm_sqr();
                    masks.iter().map(|&(c, zm)| c * w * parity_sign(s & zm)).sum()
                })?
                .1
        };
        let mut offdiag_var = 0.0;
        let mut shots_used = self.u_batch.shots();
        for (t, mplan, batch) in &self.offdiagonal {
            let (v, e) = offdiagonal_term_estimate(batch, f, mplan, t)?;
            num += v;
            offdiag_var += e * e;
            shots_used += batch.shots();
            per_term.push(TermEstimate {
                pauli: t.string.to_string(),
                coeff: t.coeff,
                kind: if mplan.mode() == PlanMode::RealPart { TermKind::RealPart } else { TermKind::ImagPart },
                value: v,
                stderr: e,
                shots: batch.shots(),
            });
        }
        let num_err = (diag_err * diag_err + offdiag_var).sqrt();
        let value = num / den;
        let stderr = (num_err / den).abs() + (num * den_err / (den * den)).abs();
        Ok(EstimationResult { value, stderr, shots_used, per_term, numerator: num, denominator: den })
    }

    /// Gradients of the estimated numerator and denominator with respect to
    /// the post-processor weights, from the same outcomes.
    pub fn weight_gradients(&self, f: &dyn Postprocessor) -> Result<(Vec<f64>, Vec<f64>)> {
        let nw = f.n_weights();
        let mut dn = vec![0.0; nw];
        let mut dd = vec![0.0; nw];
        let diag: Vec<(f64, usize)> = self.diagonal_terms.iter().map(|t| (t.coeff, t.string.z_mask())).collect();
        for_each_weighted(&self.u_batch, |s, w| {
            let fs = f.eval(s);
            f.accumulate_grad(s, fs * (2.0 * w), &mut dd);
            let h_s: f64 = diag.iter().map(|&(c, zm)| c * parity_sign(s & zm)).sum();
            if h_s != 0.0 {
                f.accumulate_grad(s, fs * (2.0 * w * h_s), &mut dn);
            }
        })?;
        for (t, mplan, batch) in &self.offdiagonal {
            let imag = mplan.mode() == PlanMode::ImagPart;
            for_each_weighted(batch, |m, w| {
                let a = m & !mplan.star_mask();
                let b = a ^ mplan.flip_mask();
                let scale = w * t.coeff * mplan.outcome_sign(m);
                let (fa, fb) = (f.eval(a), f.eval(b));
                // d Re(conj fa·fb) and d Im(conj fa·fb) written as Re(conj(cot)·df).
                let (ca, cb) = if imag {
                    (fb * C64::new(0.0, -1.0), fa * C64::new(0.0, 1.0))
                } else {
                    (fb, fa)
                };
                f.accumulate_grad(a, ca * scale, &mut dn);
                f.accumulate_grad(b, cb * scale, &mut dn);
            })?;
        }
        Ok((dn, dd))
    }
}

/// Visits each outcome with its probability weight (exact) or frequency.
fn for_each_weighted(out: &Outcomes, mut visit: impl FnMut(usize, f64)) -> Result<()> {
    match out {
        Outcomes::Exact { probs, .. } => {
            for (m, &p) in probs.iter().enumerate() {
                if p != 0.0 {
                    visit(m, p);
                }
            }
        }
        Outcomes::Sampled(batch) => {
            let n = batch.total_shots();
            if n == 0 {
                return Err(Error::EmptyBatch);
            }
            for (&m, &c) in batch.counts() {
                visit(m, c as f64 / n as f64);
            }
        }
    }
    Ok(())
}
