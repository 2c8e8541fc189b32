//! Gradients and joint optimization of circuit angles `θ` and post-processor
//! weights `φ`.
//!
//! Two routes to `dE/dθ` are provided. [`vqnhe_gradient`] follows the
//! measurement protocol: numerator and denominator are differentiated
//! separately by the parameter-shift rule and combined with the quotient
//! rule. [`exact_gradient`] is the reverse-mode (adjoint) equivalent on the
//! statevector and is what exact-mode training uses; the two are
//! cross-checked in the tests.

use std::f64::consts::FRAC_PI_4;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{collect_measurements, exact_parts, EstimateOptions, Mode, ShotPlan, MIN_DENOMINATOR};
use crate::pauli::{CompiledHamiltonian, Hamiltonian};
use crate::postproc::{PostprocSpec, Postprocessor, Table};
use crate::qsim::{Circuit, Statevector};
use crate::rng;

/// `d⟨A⟩/dθ_k = ⟨A⟩(θ_k+π/4) − ⟨A⟩(θ_k−π/4)` for gates `e^{iθP}`, summed
/// over every gate that reads slot `k`.
pub fn parameter_shift_grad<F>(circuit: &Circuit, params: &[f64], mut objective: F) -> Result<Vec<f64>>
where
    F: FnMut(&Statevector) -> Result<f64>,
{
    let mut grad = vec![0.0; circuit.n_params()];
    for (gi, g) in circuit.gates().iter().enumerate() {
        let Some(k) = g.param_slot() else { continue };
        if g.generator().is_none() {
            return Err(Error::config(format!("gate {} has no involutory generator", g.kind())));
        }
        let plus = objective(&circuit.run_shifted(params, Some((gi, FRAC_PI_4)))?)?;
        let minus = objective(&circuit.run_shifted(params, Some((gi, -FRAC_PI_4)))?)?;
        grad[k] += plus - minus;
    }
    Ok(grad)
}

/// How energies and gradients are obtained.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Exact,
    InfiniteShot,
    Sampled { shots: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientReport {
    pub energy: f64,
    pub d_theta: Vec<f64>,
    pub d_phi: Vec<f64>,
    /// Largest relative deviation from central finite differences, when audited.
    pub fd_residual_theta: Option<f64>,
    pub fd_residual_phi: Option<f64>,
}

fn parts(
    psi: &Statevector,
    f: &dyn Postprocessor,
    h: &Hamiltonian,
    compiled: &CompiledHamiltonian,
    mode: &GradientMode,
    seed: u64,
) -> Result<(f64, f64)> {
    match mode {
        GradientMode::Exact => exact_parts(psi, f, compiled),
        GradientMode::InfiniteShot => {
            let r = collect_measurements(psi, h, f.is_complex(), &EstimateOptions::new(Mode::InfiniteShot))?
                .estimate(f)?;
            Ok((r.numerator, r.denominator))
        }
        GradientMode::Sampled { shots } => {
            let opts = EstimateOptions::sampled(ShotPlan::uniform(h, *shots)?, seed);
            let r = collect_measurements(psi, h, f.is_complex(), &opts)?.estimate(f)?;
            Ok((r.numerator, r.denominator))
        }
    }
}

/// Energy and gradients by the measurement route: quotient rule over
/// parameter-shifted numerator and denominator estimates for `θ`, and
/// outcome-weighted post-processor derivatives for `φ`.
pub fn vqnhe_gradient(
    circuit: &Circuit,
    params: &[f64],
    f: &dyn Postprocessor,
    h: &Hamiltonian,
    mode: &GradientMode,
    seed: u64,
) -> Result<GradientReport> {
    let compiled = h.compile();
    let f_table = Table::of(f);
    let psi = circuit.run_shifted(params, None)?;
    let (n0, d0) = parts(&psi, &f_table, h, &compiled, mode, seed)?;
    if !(d0 > MIN_DENOMINATOR) {
        return Err(Error::DegenerateDenominator(d0));
    }
    let energy = n0 / d0;
    let mut dn = vec![0.0; circuit.n_params()];
    let mut dd = vec![0.0; circuit.n_params()];
    let mut eval_index = 1u64;
    for (gi, g) in circuit.gates().iter().enumerate() {
        let Some(k) = g.param_slot() else { continue };
        if g.generator().is_none() {
            return Err(Error::config(format!("gate {} has no involutory generator", g.kind())));
        }
        let mut shifted = |delta: f64| -> Result<(f64, f64)> {
            let s = circuit.run_shifted(params, Some((gi, delta)))?;
            eval_index += 1;
            parts(&s, &f_table, h, &compiled, mode, seed.wrapping_add(eval_index.wrapping_mul(0x9e37_79b9)))
        };
        let (np, dp) = shifted(FRAC_PI_4)?;
        let (nm, dm) = shifted(-FRAC_PI_4)?;
        dn[k] += np - nm;
        dd[k] += dp - dm;
    }
    let d_theta = dn.iter().zip(&dd).map(|(a, b)| (a * d0 - n0 * b) / (d0 * d0)).collect();

    let d_phi = if f.n_weights() == 0 {
        Vec::new()
    } else {
        match mode {
            GradientMode::Exact => exact_phi_gradient(&psi, f, &compiled)?.1,
            _ => {
                let opts = match mode {
                    GradientMode::Sampled { shots } => EstimateOptions::sampled(ShotPlan::uniform(h, *shots)?, seed),
                    _ => EstimateOptions::new(Mode::InfiniteShot),
                };
                let data = collect_measurements(&psi, h, f.is_complex(), &opts)?;
                let (gn, gd) = data.weight_gradients(f)?;
                gn.iter().zip(&gd).map(|(a, b)| (a - energy * b) / d0).collect()
            }
        }
    };
    Ok(GradientReport { energy, d_theta, d_phi, fd_residual_theta: None, fd_residual_phi: None })
}

/// Intermediate quantities of the exact energy: `Hψ_f`, numerator and
/// denominator.
struct ExactCore {
    f_vals: Vec<C64>,
    h_pf: Vec<C64>,
    num: f64,
    den: f64,
}

fn exact_core(psi: &Statevector, f_vals: Vec<C64>, h: &CompiledHamiltonian) -> Result<ExactCore> {
    let pf: Vec<C64> = psi.amplitudes().iter().zip(&f_vals).map(|(a, f)| a * f).collect();
    let den: f64 = pf.iter().map(|a| a.norm_sqr()).sum();
    if !(den > MIN_DENOMINATOR) {
        return Err(Error::DegenerateDenominator(den));
    }
    let mut h_pf = vec![C64::new(0.0, 0.0); pf.len()];
    h.apply(&pf, &mut h_pf);
    let num: f64 = pf.iter().zip(&h_pf).map(|(a, b)| (a.conj() * b).re).sum();
    Ok(ExactCore { f_vals, h_pf, num, den })
}

fn phi_grad_from_core(psi: &Statevector, f: &dyn Postprocessor, core: &ExactCore) -> Vec<f64> {
    let e = core.num / core.den;
    let mut out = vec![0.0; f.n_weights()];
    for (s, a) in psi.amplitudes().iter().enumerate() {
        let p = a.norm_sqr();
        if p == 0.0 {
            continue;
        }
        // cot_s = 2(conj(ψ_s)(Hψ_f)_s − E f_s |ψ_s|²)/d
        let cot = (a.conj() * core.h_pf[s] - core.f_vals[s] * (e * p)) * (2.0 / core.den);
        f.accumulate_grad(s, cot, &mut out);
    }
    out
}

/// Energy and `dE/dφ` from the statevector.
pub fn exact_phi_gradient(
    psi: &Statevector,
    f: &dyn Postprocessor,
    h: &CompiledHamiltonian,
) -> Result<(f64, Vec<f64>)> {
    let core = exact_core(psi, f.table(), h)?;
    Ok((core.num / core.den, phi_grad_from_core(psi, f, &core)))
}

/// Exact energy and both gradients by reverse-mode differentiation through
/// the circuit. `with_theta` / `with_phi` skip unneeded parts.
pub fn exact_gradient(
    circuit: &Circuit,
    params: &[f64],
    f: &dyn Postprocessor,
    h: &CompiledHamiltonian,
    with_theta: bool,
    with_phi: bool,
) -> Result<GradientReport> {
    let psi = circuit.run_shifted(params, None)?;
    let core = exact_core(&psi, f.table(), h)?;
    let energy = core.num / core.den;
    let d_phi = if with_phi && f.n_weights() > 0 { phi_grad_from_core(&psi, f, &core) } else { vec![0.0; f.n_weights()] };
    let mut d_theta = vec![0.0; circuit.n_params()];
    if with_theta {
        // λ = (F†HF − E F†F)ψ / d, so dE/dθ = 2Re⟨λ|∂ψ⟩.
        let n = circuit.n_qubits();
        let mut lambda: Vec<C64> = psi
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(s, a)| (core.f_vals[s].conj() * core.h_pf[s] - a * (energy * core.f_vals[s].norm_sqr())) / core.den)
            .collect();
        let mut phi = psi.into_amplitudes();
        let mut scratch = vec![C64::new(0.0, 0.0); phi.len()];
        for gi in (0..circuit.gates().len()).rev() {
            let g = &circuit.gates()[gi];
            if let Some(k) = g.param_slot() {
                let gen = g
                    .generator()
                    .ok_or_else(|| Error::config(format!("gate {} has no involutory generator", g.kind())))?;
                gen.apply(&phi, &mut scratch, n);
                // 2Re⟨λ| iP |φ⟩
                let ip: C64 = lambda.iter().zip(&scratch).map(|(l, x)| l.conj() * x).sum();
                d_theta[k] += 2.0 * (C64::new(0.0, 1.0) * ip).re;
            }
            circuit.apply_gate_inverse(gi, &mut phi, params);
            circuit.apply_gate_inverse(gi, &mut lambda, params);
        }
    }
    Ok(GradientReport { energy, d_theta, d_phi, fd_residual_theta: None, fd_residual_phi: None })
}

/// Exact gradients plus their largest relative deviation from central
/// finite differences of the exact energy (step `1e-5`).
pub fn audit_gradient(circuit: &Circuit, params: &[f64], f: &dyn Postprocessor, h: &Hamiltonian) -> Result<GradientReport> {
    let compiled = h.compile();
    let mut rep = vqnhe_gradient(circuit, params, f, h, &GradientMode::Exact, 0)?;
    let step = 1e-5;
    let energy_at = |p: &[f64], g: &dyn Postprocessor| -> Result<f64> {
        let psi = circuit.run_shifted(p, None)?;
        let (n, d) = exact_parts(&psi, g, &compiled)?;
        Ok(n / d)
    };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let mut p = params.to_vec();
        p[k] += step;
        let up = energy_at(&p, f)?;
        p[k] -= 2.0 * step;
        let down = energy_at(&p, f)?;
        worst = worst.max(rel((up - down) / (2.0 * step), rep.d_theta[k]));
    }
    rep.fd_residual_theta = Some(worst);
    let mut worst: f64 = 0.0;
    let w0 = f.weights().to_vec();
    let mut probe = f.box_clone();
    for k in 0..w0.len() {
        let mut w = w0.clone();
        w[k] += step;
        probe.set_weights(&w)?;
        let up = energy_at(params, probe.as_ref())?;
        w[k] -= 2.0 * step;
        probe.set_weights(&w)?;
        let down = energy_at(params, probe.as_ref())?;
        worst = worst.max(rel((up - down) / (2.0 * step), rep.d_phi[k]));
    }
    rep.fd_residual_phi = Some(worst);
    Ok(rep)
}

/// Adam moments for one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut Adam, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(Error::ParamCount { expected: state.m.len(), got: grads.len() });
    }
    if let Some(g) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {g}")));
    }
    state.t += 1;
    let b1t = 1.0 - state.beta1.powi(state.t as i32);
    let b2t = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let mh = state.m[i] / b1t;
        let vh = state.v[i] / b2t;
        params[i] -= lr * mh / (vh.sqrt() + state.eps);
    }
    Ok(())
}

/// Learning-rate schedules indexed by the global step `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { value: f64 },
    /// `0.01` for `i < 200`, then `0.002·0.5^((i−200)/800)`, times `scale`.
    Pqc {
        #[serde(default = "unit")]
        scale: f64,
    },
    /// `0.0006` for `i < 200`, then `0.006·0.5^((i−200)/20000)`, times `scale`.
    Nn {
        #[serde(default = "unit")]
        scale: f64,
    },
    /// `warm` for `i < start`, then `base·0.5^((i−start)/half_life)`.
    Decay { warm: f64, base: f64, start: usize, half_life: f64 },
}

fn unit() -> f64 {
    1.0
}

impl LrSchedule {
    pub fn at(&self, i: usize) -> f64 {
        let decay = |warm: f64, base: f64, start: usize, half: f64| {
            if i < start {
                warm
            } else {
                base * 0.5f64.powf((i - start) as f64 / half)
            }
        };
        match *self {
            LrSchedule::Constant { value } => value,
            LrSchedule::Pqc { scale } => scale * decay(0.01, 0.002, 200, 800.0),
            LrSchedule::Nn { scale } => scale * decay(0.0006, 0.006, 200, 20000.0),
            LrSchedule::Decay { warm, base, start, half_life } => decay(warm, base, start, half_life),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { value } => value > 0.0,
            LrSchedule::Pqc { scale } | LrSchedule::Nn { scale } => scale > 0.0,
            LrSchedule::Decay { warm, base, half_life, .. } => warm > 0.0 && base > 0.0 && half_life > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("learning rates must be positive: {self:?}")))
        }
    }
}

/// Named schedule lookup: `"pqc"` or `"nn"`.
pub fn lr_schedule(kind: &str, step: usize) -> Result<f64> {
    match kind {
        "pqc" => Ok(LrSchedule::Pqc { scale: 1.0 }.at(step)),
        "nn" => Ok(LrSchedule::Nn { scale: 1.0 }.at(step)),
        _ => Err(Error::Unknown { kind: "schedule", name: kind.to_string() }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub steps: usize,
    pub pqc_lr: LrSchedule,
    pub nn_lr: LrSchedule,
    #[serde(default = "yes")]
    pub train_pqc: bool,
    #[serde(default = "yes")]
    pub train_nn: bool,
    /// When false the post-processor is replaced by `f ≡ 1` (plain VQE).
    #[serde(default = "yes")]
    pub use_postprocessor: bool,
}

fn yes() -> bool {
    true
}

/// Parameters to start from, perturbed by uniform noise of width `width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub theta: Vec<f64>,
    #[serde(default)]
    pub phi: Option<Vec<f64>>,
    #[serde(default = "warm_width")]
    pub width: f64,
}

fn warm_width() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub stages: Vec<Stage>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_pqc_std")]
    pub pqc_init_std: f64,
    #[serde(default = "default_threshold")]
    pub convergence_threshold: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gradient_mode: GradientMode,
    #[serde(default)]
    pub warm_start: Option<WarmStart>,
    /// Stop launching restarts once a run reaches this energy.
    #[serde(default)]
    pub target_energy: Option<f64>,
}

fn default_restarts() -> usize {
    20
}
fn default_pqc_std() -> f64 {
    0.2
}
fn default_threshold() -> f64 {
    1e-9
}
fn default_patience() -> usize {
    50
}

impl TrainingConfig {
    /// PQC-only stage with `f ≡ 1`, then joint training with the PQC on a
    /// tenth of the network learning rate.
    pub fn two_stage(stage1: usize, stage2: usize) -> Self {
        Self {
            stages: vec![
                Stage {
                    steps: stage1,
                    pqc_lr: LrSchedule::Pqc { scale: 1.0 },
                    nn_lr: LrSchedule::Nn { scale: 1.0 },
                    train_pqc: true,
                    train_nn: false,
                    use_postprocessor: false,
                },
                Stage {
                    steps: stage2,
                    pqc_lr: LrSchedule::Nn { scale: 0.1 },
                    nn_lr: LrSchedule::Nn { scale: 1.0 },
                    train_pqc: true,
                    train_nn: true,
                    use_postprocessor: true,
                },
            ],
            restarts: default_restarts(),
            pqc_init_std: default_pqc_std(),
            convergence_threshold: default_threshold(),
            patience: default_patience(),
            seed: 0,
            gradient_mode: GradientMode::Exact,
            warm_start: None,
            target_energy: None,
        }
    }

    /// The same schedule with the post-processor disabled in every stage.
    pub fn vqe_baseline(&self) -> Self {
        let mut c = self.clone();
        for s in &mut c.stages {
            s.use_postprocessor = false;
            s.train_nn = false;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("at least one stage is required"));
        }
        for s in &self.stages {
            if s.steps == 0 {
                return Err(Error::config("stage steps must be at least 1"));
            }
            s.pqc_lr.validate()?;
            s.nn_lr.validate()?;
        }
        if self.restarts == 0 {
            return Err(Error::config("restarts must be at least 1"));
        }
        if !(self.pqc_init_std >= 0.0) || !(self.convergence_threshold >= 0.0) {
            return Err(Error::config("init width and threshold must be non-negative"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub energy: f64,
    pub stage: usize,
    pub lr_pqc: f64,
    pub lr_nn: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub restart: usize,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub adam_pqc: Adam,
    pub adam_nn: Adam,
    pub step: usize,
    pub best_energy: f64,
    pub best_theta: Vec<f64>,
    pub best_phi: Vec<f64>,
    /// Whether the best point used the post-processor (false: `f ≡ 1`).
    pub best_uses_postprocessor: bool,
    pub history: Vec<LogEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub restart: usize,
    pub best_energy: f64,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub best: TrainState,
    pub runs: Vec<RunSummary>,
}

/// Hamiltonian, ansatz and (optional) post-processor to train.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub hamiltonian: &'a Hamiltonian,
    pub circuit: &'a Circuit,
    pub postprocessor: Option<&'a PostprocSpec>,
}

/// Seeds of restart `r`: one stream for angles, one for the network.
fn restart_seeds(seed: u64, r: usize) -> (u64, u64) {
    (2 * r as u64, seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(r as u64 + 1))
}

/// Runs `config.restarts` seeded trainings and returns the best.
pub fn fit(problem: &Problem, config: &TrainingConfig) -> Result<FitResult> {
    fit_with(problem, config, |_, _| {})
}

/// [`fit`] with a callback invoked after every logged step.
pub fn fit_with<L: FnMut(usize, &LogEntry)>(problem: &Problem, config: &TrainingConfig, mut log: L) -> Result<FitResult> {
    config.validate()?;
    let n = problem.hamiltonian.n_qubits();
    if problem.circuit.n_qubits() != n {
        return Err(Error::Dimension(format!("circuit on {} qubits, Hamiltonian on {n}", problem.circuit.n_qubits())));
    }
    if let Some(spec) = problem.postprocessor {
        if spec.n_bits != n {
            return Err(Error::Dimension(format!("post-processor on {} bits, Hamiltonian on {n}", spec.n_bits)));
        }
    }
    let compiled = problem.hamiltonian.compile();
    let mut best: Option<TrainState> = None;
    let mut runs = Vec::new();
    for r in 0..config.restarts {
        let state = train_once(problem, config, &compiled, r, &mut log)?;
        runs.push(RunSummary { restart: r, best_energy: state.best_energy, steps: state.step });
        let reached = config.target_energy.is_some_and(|t| state.best_energy <= t);
        if best.as_ref().is_none_or(|b| state.best_energy < b.best_energy) {
            best = Some(state);
        }
        if reached {
            break;
        }
    }
    Ok(FitResult { best: best.unwrap(), runs })
}

fn train_once<L: FnMut(usize, &LogEntry)>(
    problem: &Problem,
    config: &TrainingConfig,
    compiled: &CompiledHamiltonian,
    restart: usize,
    log: &mut L,
) -> Result<TrainState> {
    let (theta_stream, nn_seed) = restart_seeds(config.seed, restart);
    let mut r = rng::substream(config.seed, theta_stream);
    let n_params = problem.circuit.n_params();
    let mut theta: Vec<f64> = match &config.warm_start {
        Some(w) => {
            if w.theta.len() != n_params {
                return Err(Error::ParamCount { expected: n_params, got: w.theta.len() });
            }
            w.theta.iter().map(|t| t + w.width * (r.random::<f64>() - 0.5)).collect()
        }
        None if config.pqc_init_std > 0.0 => {
            let d = Normal::new(0.0, config.pqc_init_std).unwrap();
            (0..n_params).map(|_| d.sample(&mut r)).collect()
        }
        None => vec![0.0; n_params],
    };
    let unit = Table::ones(problem.hamiltonian.n_qubits());
    let mut net: Box<dyn Postprocessor> = match problem.postprocessor {
        Some(spec) => spec.clone().with_seed(spec.seed.wrapping_add(nn_seed)).build()?,
        None => Box::new(unit.clone()),
    };
    if let Some(phi) = config.warm_start.as_ref().and_then(|w| w.phi.as_ref()) {
        let width = config.warm_start.as_ref().unwrap().width;
        let w: Vec<f64> = phi.iter().map(|p| p + width * (r.random::<f64>() - 0.5)).collect();
        net.set_weights(&w)?;
        net.project();
    }
    // Retained for evaluation; the stage decides whether it is applied.
    let mut phi = net.weights().to_vec();
    let mut state = TrainState {
        restart,
        theta: theta.clone(),
        phi: phi.clone(),
        adam_pqc: Adam::new(n_params),
        adam_nn: Adam::new(phi.len()),
        step: 0,
        best_energy: f64::INFINITY,
        best_theta: theta.clone(),
        best_phi: phi.clone(),
        best_uses_postprocessor: false,
        history: Vec::new(),
    };
    let mut step = 0usize;
    let mut last_use = false;
    for (si, stage) in config.stages.iter().enumerate() {
        let use_net = stage.use_postprocessor && problem.postprocessor.is_some();
        last_use = use_net;
        let train_nn = stage.train_nn && use_net;
        let mut prev = f64::NAN;
        let mut calm = 0usize;
        for _ in 0..stage.steps {
            let lr_pqc = stage.pqc_lr.at(step);
            let lr_nn = stage.nn_lr.at(step);
            let f: &dyn Postprocessor = if use_net { net.as_ref() } else { &unit };
            let rep = match &config.gradient_mode {
                GradientMode::Exact => exact_gradient(problem.circuit, &theta, f, compiled, stage.train_pqc, train_nn)?,
                mode => vqnhe_gradient(
                    problem.circuit,
                    &theta,
                    f,
                    problem.hamiltonian,
                    mode,
                    config.seed.wrapping_add((restart as u64) << 32).wrapping_add(step as u64),
                )?,
            };
            let entry = LogEntry { step, energy: rep.energy, stage: si, lr_pqc, lr_nn };
            log(restart, &entry);
            state.history.push(entry);
            if rep.energy < state.best_energy {
                state.best_energy = rep.energy;
                state.best_theta = theta.clone();
                state.best_phi = phi.clone();
                state.best_uses_postprocessor = use_net;
            }
            if (rep.energy - prev).abs() < config.convergence_threshold {
                calm += 1;
            } else {
                calm = 0;
            }
            prev = rep.energy;
            step += 1;
            if calm >= config.patience {
                break;
            }
            if stage.train_pqc {
                adam_step(&mut state.adam_pqc, &mut theta, &rep.d_theta, lr_pqc)?;
            }
            if train_nn {
                adam_step(&mut state.adam_nn, &mut phi, &rep.d_phi, lr_nn)?;
                net.set_weights(&phi)?;
                net.project();
                phi.copy_from_slice(net.weights());
            }
        }
    }
    // Score the final parameters too.
    let f: &dyn Postprocessor = if last_use { net.as_ref() } else { &unit };
    let psi = problem.circuit.run_shifted(&theta, None)?;
    let (num, den) = exact_parts_or_estimate(&psi, f, problem.hamiltonian, compiled, &config.gradient_mode)?;
    let final_energy = num / den;
    if final_energy < state.best_energy {
        state.best_energy = final_energy;
        state.best_theta = theta.clone();
        state.best_phi = phi.clone();
        state.best_uses_postprocessor = last_use;
    }
    state.theta = theta;
    state.phi = phi;
    state.step = step;
    Ok(state)
}

fn exact_parts_or_estimate(
    psi: &Statevector,
    f: &dyn Postprocessor,
    h: &Hamiltonian,
    compiled: &CompiledHamiltonian,
    mode: &GradientMode,
) -> Result<(f64, f64)> {
    match mode {
        GradientMode::Exact => exact_parts(psi, f, compiled),
        _ => {
            let r = collect_measurements(psi, h, f.is_complex(), &EstimateOptions::new(Mode::InfiniteShot))?
                .estimate(&Table::of(f))?;
            Ok((r.numerator, r.denominator))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{hardware_efficient, tfim_qaoa};
    use crate::estimate::exact_energy;
    use crate::pauli::{build_tfim, exact_ground, parse_hamiltonian, Boundary};
    use crate::postproc::Activation;
    use crate::qsim::{Angle, Bitstring, Gate, InitialState};

    fn random_params(c: &Circuit, seed: u64) -> Vec<f64> {
        let mut r = rng::from_seed(seed);
        (0..c.n_params()).map(|_| r.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn single_rx_shift_rule() {
        let mut c = Circuit::new(1, InitialState::Zeros).unwrap();
        c.push(Gate::Rx(0, Angle::Slot(0))).unwrap();
        let z = parse_hamiltonian("1\n1.0 Z0\n").unwrap().compile();
        for theta in [0.0, 0.3, -1.1, std::f64::consts::FRAC_PI_2] {
            let g = parameter_shift_grad(&c, &[theta], |s| Ok(z.expectation(s.amplitudes()))).unwrap();
            assert!((g[0] + 2.0 * (2.0 * theta).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_rule_matches_finite_differences() {
        let c = hardware_efficient(4, 2, Bitstring::zeros(4)).unwrap();
        let h = build_tfim(4, Boundary::Open).unwrap().compile();
        let p = random_params(&c, 3);
        let obj = |s: &Statevector| Ok(h.expectation(s.amplitudes()));
        let g = parameter_shift_grad(&c, &p, obj).unwrap();
        for k in 0..p.len() {
            let mut q = p.clone();
            let step = 1e-5;
            q[k] += step;
            let up = h.expectation(c.run_shifted(&q, None).unwrap().amplitudes());
            q[k] -= 2.0 * step;
            let down = h.expectation(c.run_shifted(&q, None).unwrap().amplitudes());
            let fd = (up - down) / (2.0 * step);
            assert!((fd - g[k]).abs() <= 1e-7 * g[k].abs().max(1.0));
        }
    }

    #[test]
    fn adjoint_and_shift_routes_agree() {
        let h = build_tfim(4, Boundary::Periodic).unwrap();
        let c = tfim_qaoa(4, 2).unwrap();
        let p = random_params(&c, 8);
        let f = PostprocSpec::mlp(4, &[6, 3], &[Activation::Relu, Activation::Relu], Some(5.0))
            .with_seed(2)
            .with_init_std(0.4)
            .build()
            .unwrap();
        let shift = vqnhe_gradient(&c, &p, f.as_ref(), &h, &GradientMode::Exact, 0).unwrap();
        let adj = exact_gradient(&c, &p, f.as_ref(), &h.compile(), true, true).unwrap();
        assert!((shift.energy - adj.energy).abs() < 1e-12);
        for (a, b) in shift.d_theta.iter().zip(&adj.d_theta) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in shift.d_phi.iter().zip(&adj.d_phi) {
            assert!((a - b).abs() < 1e-12);
        }
        let inf = vqnhe_gradient(&c, &p, f.as_ref(), &h, &GradientMode::InfiniteShot, 0).unwrap();
        for (a, b) in inf.d_theta.iter().zip(&adj.d_theta) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in inf.d_phi.iter().zip(&adj.d_phi) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn complex_rbm_measured_gradient_matches_exact() {
        let h = parse_hamiltonian("3\n0.5 X0 Y1\n-0.3 Y0 Z1 X2\n0.7 Z0 Z2\n0.2 X1\n").unwrap();
        let c = hardware_efficient(3, 2, Bitstring::parse("100").unwrap()).unwrap();
        let p = random_params(&c, 4);
        let f = PostprocSpec::rbm(3, 4, true).with_init_std(0.4).with_seed(1).build().unwrap();
        let inf = vqnhe_gradient(&c, &p, f.as_ref(), &h, &GradientMode::InfiniteShot, 0).unwrap();
        let adj = exact_gradient(&c, &p, f.as_ref(), &h.compile(), true, true).unwrap();
        for (a, b) in inf.d_phi.iter().zip(&adj.d_phi) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn audit_passes_on_random_instance() {
        let h = build_tfim(4, Boundary::Open).unwrap();
        let c = hardware_efficient(4, 1, Bitstring::zeros(4)).unwrap();
        let p = random_params(&c, 5);
        let f = PostprocSpec::jastrow(4).with_init_std(0.3).with_seed(6).build().unwrap();
        let rep = audit_gradient(&c, &p, f.as_ref(), &h).unwrap();
        assert!(rep.fd_residual_theta.unwrap() < 1e-5);
        assert!(rep.fd_residual_phi.unwrap() < 1e-5);
    }

    #[test]
    fn unit_postprocessor_reduces_to_vqe_gradient() {
        let h = build_tfim(4, Boundary::Open).unwrap();
        let c = hardware_efficient(4, 1, Bitstring::zeros(4)).unwrap();
        let p = random_params(&c, 9);
        let hc = h.compile();
        let vqe = parameter_shift_grad(&c, &p, |s| Ok(hc.expectation(s.amplitudes()))).unwrap();
        let rep = vqnhe_gradient(&c, &p, &Table::ones(4), &h, &GradientMode::Exact, 0).unwrap();
        for (a, b) in vqe.iter().zip(&rep.d_theta) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_basics() {
        let mut a = Adam::new(2);
        let mut p = vec![1.0, -2.0];
        adam_step(&mut a, &mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        let mut a = Adam::new(1);
        let mut p = vec![0.0];
        adam_step(&mut a, &mut p, &[3.0], 0.01).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!(adam_step(&mut a, &mut p, &[f64::NAN], 0.01).is_err());
        assert!(adam_step(&mut a, &mut p, &[1.0, 2.0], 0.01).is_err());
    }

    #[test]
    fn schedules() {
        assert_eq!(lr_schedule("pqc", 0).unwrap(), 0.01);
        assert_eq!(lr_schedule("pqc", 199).unwrap(), 0.01);
        assert_eq!(lr_schedule("pqc", 200).unwrap(), 0.002);
        assert!((lr_schedule("pqc", 1000).unwrap() - 0.001).abs() < 1e-18);
        assert_eq!(lr_schedule("nn", 10).unwrap(), 0.0006);
        assert!((lr_schedule("nn", 20200).unwrap() - 0.003).abs() < 1e-18);
        assert!(lr_schedule("sgd", 0).is_err());
    }

    #[test]
    fn polarizes_single_z() {
        let h = parse_hamiltonian("2\n1.0 Z0\n").unwrap();
        let c = hardware_efficient(2, 1, Bitstring::zeros(2)).unwrap();
        let mut cfg = TrainingConfig::two_stage(600, 1);
        cfg.stages[0].pqc_lr = LrSchedule::Constant { value: 0.05 };
        cfg.restarts = 2;
        let res = fit(&Problem { hamiltonian: &h, circuit: &c, postprocessor: None }, &cfg).unwrap();
        assert!((res.best.best_energy + 1.0).abs() < 1e-8, "{}", res.best.best_energy);
    }

    #[test]
    fn vqe_stage_converges_on_small_tfim() {
        let h = build_tfim(4, Boundary::Periodic).unwrap();
        let c = tfim_qaoa(4, 2).unwrap();
        let mut cfg = TrainingConfig::two_stage(1500, 1);
        cfg.stages[0].pqc_lr = LrSchedule::Constant { value: 0.02 };
        cfg.restarts = 3;
        cfg.seed = 4;
        let res = fit(&Problem { hamiltonian: &h, circuit: &c, postprocessor: None }, &cfg).unwrap();
        let (e0, _) = exact_ground(&h).unwrap();
        assert!(res.best.best_energy >= e0 - 1e-9);
        // p = 2 QAOA is exact for the 4-site ring.
        assert!(res.best.best_energy - e0 < 1e-6, "{} vs {e0}", res.best.best_energy);
        let again = fit(&Problem { hamiltonian: &h, circuit: &c, postprocessor: None }, &cfg).unwrap();
        assert_eq!(res.best.history, again.best.history);
    }

    #[test]
    fn joint_training_improves_on_stage_one() {
        let h = build_tfim(4, Boundary::Open).unwrap();
        let c = hardware_efficient(4, 1, Bitstring::zeros(4)).unwrap();
        let spec = PostprocSpec::mlp(4, &[8], &[Activation::Relu], Some(5.0)).with_seed(1);
        let mut cfg = TrainingConfig::two_stage(300, 600);
        cfg.stages[1].nn_lr = LrSchedule::Constant { value: 0.01 };
        cfg.restarts = 1;
        let res = fit(&Problem { hamiltonian: &h, circuit: &c, postprocessor: Some(&spec) }, &cfg).unwrap();
        let hist = &res.best.history;
        let stage1_best = hist.iter().filter(|e| e.stage == 0).map(|e| e.energy).fold(f64::INFINITY, f64::min);
        assert!(res.best.best_energy < stage1_best);
        assert!(res.best.best_uses_postprocessor);
        // Best energy reproduces from the stored parameters.
        let mut f = spec.clone().with_seed(spec.seed.wrapping_add(restart_seeds(0, 0).1)).build().unwrap();
        f.set_weights(&res.best.best_phi).unwrap();
        let e = exact_energy(&c, &res.best.best_theta, f.as_ref(), &h).unwrap();
        assert!((e - res.best.best_energy).abs() < 1e-12);
    }

    #[test]
    fn config_validation_and_json() {
        let cfg = TrainingConfig::two_stage(10, 10);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: TrainingConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let mut bad = cfg.clone();
        bad.stages[0].steps = 0;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.stages[1].nn_lr = LrSchedule::Constant { value: -1.0 };
        assert!(bad.validate().is_err());
        let vqe = cfg.vqe_baseline();
        assert!(vqe.stages.iter().all(|s| !s.use_postprocessor));
    }
}
