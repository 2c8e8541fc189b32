//! Named experiments, result records, shot studies and CSV export.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ansatz::{AnsatzSpec, Family as AnsatzFamily};
use crate::error::{Error, Result};
use crate::estimate::{estimate_energy, stderr_bound, EstimateOptions, Mode, ShotPlan};
use crate::pauli::{build_heisenberg, build_tfim, exact_ground, Boundary, Hamiltonian};
use crate::postproc::{Activation, Checkpoint, PostprocSpec, Postprocessor, Table};
use crate::train::{fit_with, FitResult, GradientMode, Problem, TrainingConfig};

/// Where the Hamiltonian comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Builder {
        builder: String,
        n_qubits: usize,
        #[serde(default = "periodic")]
        boundary: Boundary,
    },
    File {
        path: PathBuf,
    },
}

fn periodic() -> Boundary {
    Boundary::Periodic
}

impl ModelSpec {
    pub fn build(&self) -> Result<Hamiltonian> {
        match self {
            ModelSpec::Builder { builder, n_qubits, boundary } => match builder.as_str() {
                "tfim" => build_tfim(*n_qubits, *boundary),
                "heisenberg" => build_heisenberg(*n_qubits, *boundary),
                other => Err(Error::Unknown { kind: "model builder", name: other.to_string() }),
            },
            ModelSpec::File { path } => {
                if !path.exists() {
                    return Err(Error::config(format!("Hamiltonian file {} does not exist", path.display())));
                }
                Hamiltonian::load(path)
            }
        }
    }
}

/// A published reference energy the exact solver must reproduce.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuotedReference {
    pub energy: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub experiment: String,
    pub model: ModelSpec,
    pub ansatz: AnsatzSpec,
    #[serde(default)]
    pub postprocessor: Option<PostprocSpec>,
    pub training: TrainingConfig,
    /// Also train the same ansatz with `f ≡ 1` under the same budget.
    #[serde(default = "yes")]
    pub compare_vqe: bool,
    #[serde(default)]
    pub quoted_reference: Option<QuotedReference>,
    /// Stop VQNHE restarts once the relative error is at most this.
    #[serde(default)]
    pub target_rel_error: Option<f64>,
    /// Stop VQNHE restarts once the relative error is this many times
    /// smaller than the VQE one.
    #[serde(default)]
    pub target_vqe_ratio: Option<f64>,
    /// Excluded from the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

impl RunSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 over the canonical JSON of every result-affecting field.
    pub fn config_hash(&self) -> Result<String> {
        let mut clean = self.clone();
        clean.out_dir = None;
        let value = serde_json::to_value(&clean)?;
        let digest = Sha256::digest(serde_json::to_vec(&value)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        let h = self.model.build()?;
        let n = h.n_qubits();
        if self.ansatz.n_qubits != n {
            return Err(Error::Dimension(format!("ansatz on {} qubits, model on {n}", self.ansatz.n_qubits)));
        }
        if let Some(p) = &self.postprocessor {
            if p.n_bits != n {
                return Err(Error::Dimension(format!("post-processor on {} bits, model on {n}", p.n_bits)));
            }
        }
        if let Some(w) = &self.training.warm_start {
            if w.theta.len() != self.ansatz.param_count() {
                return Err(Error::ParamCount { expected: self.ansatz.param_count(), got: w.theta.len() });
            }
        }
        Ok(())
    }
}

pub const BUILTINS: [&str; 4] = ["tfim12", "heisenberg12", "heisenberg12_clamped", "tfim5_open"];

fn relu(k: usize) -> Vec<Activation> {
    vec![Activation::Relu; k]
}

/// The registered experiments. `custom-file` is built with [`custom_file`].
pub fn builtin(name: &str) -> Result<RunSpec> {
    let (model, ansatz, post, reference, stages) = match name {
        "tfim12" => (
            ("tfim", 12, Boundary::Periodic),
            AnsatzSpec::new(AnsatzFamily::TfimQaoa, 12, 2),
            PostprocSpec::mlp(12, &[24, 12], &relu(2), Some(5.0)),
            QuotedReference { energy: -15.3226, tolerance: 1e-3 },
            (2000, 3000),
        ),
        "heisenberg12" | "heisenberg12_clamped" => (
            ("heisenberg", 12, Boundary::Periodic),
            AnsatzSpec::new(AnsatzFamily::HeisenbergSwap, 12, 2),
            PostprocSpec::mlp(12, &[24, 12, 24], &relu(3), Some(if name == "heisenberg12" { 5.0 } else { 1.0 })),
            QuotedReference { energy: -21.5496, tolerance: 1e-3 },
            (3000, 8000),
        ),
        "tfim5_open" => (
            ("tfim", 5, Boundary::Open),
            AnsatzSpec::new(AnsatzFamily::Tfim5Supp, 5, 1),
            PostprocSpec::mlp(5, &[10, 20], &[Activation::Relu, Activation::Sigmoid], Some(5.0)),
            QuotedReference { energy: -6.02667418, tolerance: 1e-7 },
            (2000, 20000),
        ),
        _ => return Err(Error::Unknown { kind: "experiment", name: name.to_string() }),
    };
    Ok(RunSpec {
        experiment: name.to_string(),
        model: ModelSpec::Builder { builder: model.0.to_string(), n_qubits: model.1, boundary: model.2 },
        ansatz,
        postprocessor: Some(post),
        training: TrainingConfig::two_stage(stages.0, stages.1),
        compare_vqe: true,
        quoted_reference: Some(reference),
        target_rel_error: None,
        target_vqe_ratio: None,
        out_dir: None,
    })
}

/// Hardware-efficient circuit with a complex RBM on a Hamiltonian file.
pub fn custom_file(path: impl AsRef<Path>, depth: usize, n_hidden: usize) -> Result<RunSpec> {
    let model = ModelSpec::File { path: path.as_ref().to_path_buf() };
    let n = model.build()?.n_qubits();
    let mut training = TrainingConfig::two_stage(1000, 3000);
    training.pqc_init_std = 0.03;
    Ok(RunSpec {
        experiment: "custom-file".to_string(),
        model,
        ansatz: AnsatzSpec::new(AnsatzFamily::HardwareEfficient, n, depth),
        postprocessor: Some(PostprocSpec::rbm(n, n_hidden, true)),
        training,
        compare_vqe: true,
        quoted_reference: None,
        target_rel_error: None,
        target_vqe_ratio: None,
        out_dir: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub energy: f64,
    pub reference: f64,
    pub rel_error: f64,
    /// Present for sampled training only.
    #[serde(default)]
    pub stderr: Option<f64>,
    #[serde(default)]
    pub shots: Option<u64>,
    #[serde(default)]
    pub vqe_energy: Option<f64>,
    #[serde(default)]
    pub vqe_rel_error: Option<f64>,
    pub restarts_run: usize,
    pub wall_time_s: f64,
    pub seed: u64,
    pub config_hash: String,
}

pub fn rel_error(energy: f64, reference: f64) -> f64 {
    ((energy - reference) / reference).abs()
}

impl ResultRecord {
    /// Relative error recomputed from the stored energies.
    pub fn check(&self) -> bool {
        (rel_error(self.energy, self.reference) - self.rel_error).abs() <= 1e-12
    }
}

/// Trained parameters together with everything needed to rebuild the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: ModelSpec,
    pub ansatz: AnsatzSpec,
    pub theta: Vec<f64>,
    /// Absent when the best point used `f ≡ 1`.
    #[serde(default)]
    pub postprocessor: Option<PostprocSpec>,
    #[serde(default)]
    pub weights: Option<Checkpoint>,
}

impl TrainedModel {
    fn from_fit(spec: &RunSpec, fit: &FitResult) -> Result<Self> {
        let (postprocessor, weights) = match (&spec.postprocessor, fit.best.best_uses_postprocessor) {
            (Some(p), true) => {
                let mut f = p.build()?;
                f.set_weights(&fit.best.best_phi)?;
                (Some(p.clone()), Some(Checkpoint::of(f.as_ref())))
            }
            _ => (None, None),
        };
        Ok(Self {
            model: spec.model.clone(),
            ansatz: spec.ansatz.clone(),
            theta: fit.best.best_theta.clone(),
            postprocessor,
            weights,
        })
    }

    pub fn postprocessor(&self) -> Result<Box<dyn Postprocessor>> {
        match (&self.postprocessor, &self.weights) {
            (Some(p), Some(w)) => {
                let mut f = p.build()?;
                w.restore(f.as_mut())?;
                Ok(f)
            }
            _ => Ok(Box::new(Table::ones(self.ansatz.n_qubits))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::config(format!("checkpoint {} does not exist", path.display())));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkOutcome {
    pub record: ResultRecord,
    pub trained: TrainedModel,
    pub vqe: Option<TrainedModel>,
}

fn stage_err(stage: &str, e: Error) -> Error {
    Error::Config(format!("{stage}: {e}"))
}

/// Trains VQE (optionally) and VQNHE on the spec and writes `record.json`,
/// `log.jsonl` and checkpoints into `out_dir` when it is set.
pub fn run_benchmark(spec: &RunSpec) -> Result<BenchmarkOutcome> {
    let start = Instant::now();
    spec.validate().map_err(|e| stage_err("validate", e))?;
    let config_hash = spec.config_hash()?;
    let h = spec.model.build()?;
    let (e0, _) = exact_ground(&h).map_err(|e| stage_err("exact reference", e))?;
    if let Some(q) = spec.quoted_reference {
        if (e0 - q.energy).abs() > q.tolerance {
            return Err(stage_err(
                "exact reference",
                Error::config(format!("exact energy {e0} differs from quoted {} by more than {}", q.energy, q.tolerance)),
            ));
        }
    }
    let circuit = spec.ansatz.build()?;
    let mut log = match &spec.out_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            Some(std::io::BufWriter::new(std::fs::File::create(d.join("log.jsonl"))?))
        }
        None => None,
    };
    let mut write_log = |label: &str, restart: usize, entry: &crate::train::LogEntry| {
        if let Some(w) = log.as_mut() {
            let mut v = serde_json::to_value(entry).unwrap();
            v["run"] = label.into();
            v["restart"] = restart.into();
            let _ = writeln!(w, "{v}");
        }
    };

    let (vqe_fit, vqe_model) = if spec.compare_vqe {
        let fit = fit_with(
            &Problem { hamiltonian: &h, circuit: &circuit, postprocessor: None },
            &spec.training.vqe_baseline(),
            |r, e| write_log("vqe", r, e),
        )
        .map_err(|e| stage_err("vqe training", e))?;
        let model = TrainedModel::from_fit(&RunSpec { postprocessor: None, ..spec.clone() }, &fit)?;
        (Some(fit), Some(model))
    } else {
        (None, None)
    };
    let vqe_energy = vqe_fit.as_ref().map(|f| f.best.best_energy);

    let mut training = spec.training.clone();
    let mut targets = Vec::new();
    if let Some(t) = spec.target_rel_error {
        targets.push(t);
    }
    if let (Some(k), Some(v)) = (spec.target_vqe_ratio, vqe_energy) {
        targets.push(rel_error(v, e0) / k);
    }
    if let Some(t) = targets.into_iter().reduce(f64::min) {
        let mut goal = e0 + t * e0.abs();
        if let Some(v) = vqe_energy {
            goal = goal.min(v);
        }
        training.target_energy = Some(training.target_energy.map_or(goal, |g| g.min(goal)));
    }
    let fit = fit_with(
        &Problem { hamiltonian: &h, circuit: &circuit, postprocessor: spec.postprocessor.as_ref() },
        &training,
        |r, e| write_log("vqnhe", r, e),
    )
    .map_err(|e| stage_err("vqnhe training", e))?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    let trained = TrainedModel::from_fit(spec, &fit)?;

    let (stderr, shots) = match &spec.training.gradient_mode {
        GradientMode::Sampled { shots } => {
            let f = trained.postprocessor()?;
            let opts = EstimateOptions::sampled(ShotPlan::uniform(&h, *shots)?, spec.training.seed);
            let r = estimate_energy(&circuit, &trained.theta, f.as_ref(), &h, &opts)?;
            (Some(r.stderr), Some(r.shots_used))
        }
        _ => (None, None),
    };
    let energy = fit.best.best_energy;
    let record = ResultRecord {
        experiment: spec.experiment.clone(),
        energy,
        reference: e0,
        rel_error: rel_error(energy, e0),
        stderr,
        shots,
        vqe_energy,
        vqe_rel_error: vqe_energy.map(|v| rel_error(v, e0)),
        restarts_run: fit.runs.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
        seed: spec.training.seed,
        config_hash,
    };
    if let Some(d) = &spec.out_dir {
        std::fs::write(d.join("record.json"), serde_json::to_string_pretty(&record)?)?;
        trained.save(d.join("checkpoint.json"))?;
        if let Some(v) = &vqe_model {
            v.save(d.join("vqe_checkpoint.json"))?;
        }
    }
    Ok(BenchmarkOutcome { record, trained, vqe: vqe_model })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotRow {
    pub shots: u64,
    pub repeats: usize,
    pub mean: f64,
    /// Sample standard deviation over repeats; `None` when `repeats == 1`.
    pub std: Option<f64>,
    /// `3r²/(2√N)` for the post-processor range `r`.
    pub stderr_bound: f64,
    /// The same bound times the one-norm of the non-identity coefficients.
    pub scaled_bound: f64,
    pub exact: f64,
}

/// Seeded sampled estimates at a trained point for each shot count.
pub fn shot_study(model: &TrainedModel, shot_list: &[u64], repeats: usize, seed: u64) -> Result<Vec<ShotRow>> {
    if shot_list.is_empty() || repeats == 0 {
        return Err(Error::config("shot_study needs at least one shot count and one repeat"));
    }
    let h = model.model.build()?;
    let circuit = model.ansatz.build()?;
    let f = model.postprocessor()?;
    let exact = estimate_energy(&circuit, &model.theta, f.as_ref(), &h, &EstimateOptions::new(Mode::Exact))?.value;
    let norm: f64 = h.terms().iter().filter(|t| !t.string.is_identity()).map(|t| t.coeff.abs()).sum();
    let mut rows = Vec::new();
    for (i, &n) in shot_list.iter().enumerate() {
        let mut values = Vec::with_capacity(repeats);
        for k in 0..repeats {
            let s = seed.wrapping_add(((i as u64) << 32) | k as u64);
            let opts = EstimateOptions::sampled(ShotPlan::uniform(&h, n)?, s);
            values.push(estimate_energy(&circuit, &model.theta, f.as_ref(), &h, &opts)?.value);
        }
        let mean = values.iter().sum::<f64>() / repeats as f64;
        let std = (repeats > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt());
        let bound = stderr_bound(f.output_range(), n)?;
        rows.push(ShotRow { shots: n, repeats, mean, std, stderr_bound: bound, scaled_bound: bound * norm, exact });
    }
    Ok(rows)
}

/// Writes shot-study rows as CSV; a missing std is written as `NA`.
pub fn shot_rows_csv(rows: &[ShotRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["shots", "repeats", "mean", "std", "stderr_bound", "scaled_bound", "exact"])?;
    for r in rows {
        w.write_record([
            r.shots.to_string(),
            r.repeats.to_string(),
            fmt17(r.mean),
            r.std.map_or("NA".to_string(), fmt17),
            fmt17(r.stderr_bound),
            fmt17(r.scaled_bound),
            fmt17(r.exact),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).unwrap())
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV of `experiment, energy, reference, rel_error, stderr`, sorted by
/// experiment name. An absent stderr is an empty field.
pub fn export_plot_data(records: &[ResultRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::config("export needs at least one record"));
    }
    let mut sorted: Vec<&ResultRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.experiment.cmp(&b.experiment));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["experiment", "energy", "reference", "rel_error", "stderr"])?;
    for r in sorted {
        w.write_record([
            r.experiment.clone(),
            fmt17(r.energy),
            fmt17(r.reference),
            fmt17(r.rel_error),
            r.stderr.map(fmt17).unwrap_or_default(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).unwrap())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub experiment: String,
    pub energy: f64,
    pub reference: f64,
    pub rel_error: f64,
    pub stderr: Option<f64>,
}

pub fn parse_plot_data(text: &str) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let num = |s: &str, line: usize| s.parse::<f64>().map_err(|e| Error::Parse { line, msg: format!("{s:?}: {e}") });
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 5 {
            return Err(Error::Parse { line, msg: format!("expected 5 fields, got {}", rec.len()) });
        }
        out.push(PlotRow {
            experiment: rec[0].to_string(),
            energy: num(&rec[1], line)?,
            reference: num(&rec[2], line)?,
            rel_error: num(&rec[3], line)?,
            stderr: if rec[4].is_empty() { None } else { Some(num(&rec[4], line)?) },
        });
    }
    Ok(out)
}
