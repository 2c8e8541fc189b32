use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vqnhe::ansatz::{AnsatzSpec, Family};
use vqnhe::bench::{
    builtin, custom_file, export_plot_data, run_benchmark, shot_rows_csv, shot_study, ResultRecord, RunSpec,
    TrainedModel, BUILTINS,
};
use vqnhe::estimate::{estimate_energy, EstimateOptions, Mode, ShotPlan, DEFAULT_SHOTS};
use vqnhe::measure::{build_plan, diagonal_plan, PlanMode};
use vqnhe::pauli::PauliString;
use vqnhe::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "vqnhe", version, about = "Variational quantum-neural hybrid eigensolver toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Overrides the seed of the loaded configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory or file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a named experiment and print its result record.
    Run {
        /// One of the builtins, or `custom-file` together with `--hamiltonian`.
        experiment: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        hamiltonian: Option<PathBuf>,
        #[arg(long)]
        restarts: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the energy at a trained checkpoint.
    Estimate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// exact, infinite_shot or sampled.
        #[arg(long, default_value = "exact")]
        mode: String,
        /// Shots per measurement basis in sampled mode.
        #[arg(long, default_value_t = DEFAULT_SHOTS)]
        shots: u64,
        #[arg(long)]
        physical_cz: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Print the measurement plan of a Pauli string.
    Plan {
        /// Sparse (`X0 Y1`) or dense (`XYI`) form.
        #[arg(long)]
        pauli: String,
        #[arg(long = "n", visible_alias = "n-qubits")]
        n_qubits: usize,
        /// Build V' (imaginary part) instead of V.
        #[arg(long)]
        imag: bool,
        #[arg(long)]
        physical_cz: bool,
    },
    /// Print an ansatz circuit as JSON.
    Ansatz {
        #[arg(long)]
        family: String,
        #[arg(long = "n", visible_alias = "n-qubits")]
        n_qubits: usize,
        #[arg(long = "p", visible_alias = "depth", default_value_t = 1)]
        depth: usize,
        #[arg(long)]
        init: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train from a run configuration, streaming one JSON log line per step.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sampled-estimate statistics at a checkpoint for several shot counts.
    Shots {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        shots: Vec<u64>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Merge result records into a plot-ready CSV.
    Export {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, text)?;
        }
        None => say(text.trim_end())?,
    }
    Ok(())
}

/// Writes one line to stdout; a closed pipe is not an error.
fn say(line: &str) -> Result<()> {
    match writeln!(io::stdout().lock(), "{line}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_spec(experiment: Option<&str>, config: Option<&Path>, hamiltonian: Option<&Path>) -> Result<RunSpec> {
    match (experiment, config) {
        (_, Some(c)) => RunSpec::from_json(&read(c)?),
        (Some("custom-file"), None) => {
            let h = hamiltonian.ok_or_else(|| Error::Config("custom-file needs --hamiltonian".into()))?;
            custom_file(h, 1, 4 * vqnhe::pauli::Hamiltonian::load(h)?.n_qubits())
        }
        (Some(name), None) => builtin(name),
        (None, None) => Err(Error::Config(format!(
            "give an experiment ({} or custom-file) or --config",
            BUILTINS.join(", ")
        ))),
    }
}

fn apply_common(spec: &mut RunSpec, common: &Common) {
    if let Some(s) = common.seed {
        spec.training.seed = s;
    }
    if let Some(o) = &common.out {
        spec.out_dir = Some(o.clone());
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { experiment, config, hamiltonian, restarts, common } => {
            let mut spec = load_spec(experiment.as_deref(), config.as_deref(), hamiltonian.as_deref())?;
            apply_common(&mut spec, &common);
            if let Some(r) = restarts {
                spec.training.restarts = r;
            }
            let outcome = run_benchmark(&spec)?;
            say(&serde_json::to_string_pretty(&outcome.record)?)?;
        }
        Command::Estimate { checkpoint, mode, shots, physical_cz, common } => {
            let model = TrainedModel::load(&checkpoint)?;
            let h = model.model.build()?;
            let circuit = model.ansatz.build()?;
            let f = model.postprocessor()?;
            let mode: Mode = mode.parse()?;
            let mut opts = EstimateOptions::new(mode);
            opts.seed = common.seed.unwrap_or(0);
            opts.physical_cz = physical_cz;
            if mode == Mode::Sampled {
                opts.shots = Some(ShotPlan::uniform(&h, shots)?);
            }
            let r = estimate_energy(&circuit, &model.theta, f.as_ref(), &h, &opts)?;
            emit(common.out.as_deref(), &serde_json::to_string_pretty(&r)?)?;
        }
        Command::Plan { pauli, n_qubits, imag, physical_cz } => {
            let p = PauliString::parse(&pauli, n_qubits)?;
            let plan = if p.is_diagonal() {
                diagonal_plan(&p)?
            } else {
                build_plan(&p, if imag { PlanMode::ImagPart } else { PlanMode::RealPart }, physical_cz)?
            };
            say(&plan.to_json()?)?;
        }
        Command::Ansatz { family, n_qubits, depth, init, common } => {
            let family: Family = family.parse()?;
            let mut spec = AnsatzSpec::new(family, n_qubits, depth);
            if let Some(b) = init {
                spec = spec.with_init(&b);
            }
            emit(common.out.as_deref(), &spec.build()?.to_json()?)?;
        }
        Command::Fit { config, common } => {
            let mut spec = RunSpec::from_json(&read(&config)?)?;
            apply_common(&mut spec, &common);
            spec.compare_vqe = false;
            let h = spec.model.build()?;
            spec.validate()?;
            let circuit = spec.ansatz.build()?;
            let problem = vqnhe::train::Problem {
                hamiltonian: &h,
                circuit: &circuit,
                postprocessor: spec.postprocessor.as_ref(),
            };
            let fit = vqnhe::train::fit_with(&problem, &spec.training, |r, e| {
                let mut v = serde_json::to_value(e).unwrap();
                v["restart"] = r.into();
                let _ = say(&v.to_string());
            })?;
            let best = &fit.best;
            if let Some(dir) = &spec.out_dir {
                fs::create_dir_all(dir)?;
                let mut model = TrainedModel {
                    model: spec.model.clone(),
                    ansatz: spec.ansatz.clone(),
                    theta: best.best_theta.clone(),
                    postprocessor: None,
                    weights: None,
                };
                if let (Some(p), true) = (&spec.postprocessor, best.best_uses_postprocessor) {
                    let mut f = p.build()?;
                    f.set_weights(&best.best_phi)?;
                    model.postprocessor = Some(p.clone());
                    model.weights = Some(vqnhe::postproc::Checkpoint::of(f.as_ref()));
                }
                model.save(dir.join("checkpoint.json"))?;
            }
            eprintln!("{}", json!({"best_energy": best.best_energy, "restart": best.restart}));
        }
        Command::Shots { checkpoint, shots, repeats, common } => {
            let model = TrainedModel::load(&checkpoint)?;
            let rows = shot_study(&model, &shots, repeats, common.seed.unwrap_or(0))?;
            emit(common.out.as_deref(), &shot_rows_csv(&rows)?)?;
        }
        Command::Export { records, common } => {
            let mut all = Vec::new();
            for p in &records {
                let rec: ResultRecord = serde_json::from_str(&read(p)?)?;
                all.push(rec);
            }
            emit(common.out.as_deref(), &export_plot_data(&all)?)?;
        }
    }
    Ok(())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Parse { .. } => "parse",
        Error::Config(_) | Error::Unknown { .. } => "config",
        Error::Io(_) => "io",
        Error::Json(_) | Error::Csv(_) => "format",
        Error::DegenerateDenominator(_) | Error::NonFinite(_) => "numerical",
        _ => "invalid_input",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", json!({"error": e.to_string().trim(), "kind": "usage"}));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.to_string(), "kind": error_kind(&e)}));
            ExitCode::FAILURE
        }
    }
}
