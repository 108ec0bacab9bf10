//! `stroke-eit`: simulate measurements, train approximation-error
//! statistics, reconstruct and export.
//!
//! Exit codes: 0 success, 2 configuration or provenance error, 3 numerical
//! failure, 4 I/O or file-format error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stroke_eit::aem::{build_whitener, train_error_model};
use stroke_eit::config::{PipelineConfig, Setup};
use stroke_eit::io::{self, ReconstructionRecord};
use stroke_eit::phantom::{sample_target, simulate_measurement, MeasurementRecord, Patient};
use stroke_eit::recon::{reconstruct, StopRule};
use stroke_eit::Error;

#[derive(Parser)]
#[command(name = "stroke-eit", version, about = "Absolute EIT stroke imaging on layered 2D head phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy measurements of a random target head.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Also write the data as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        case: Option<u8>,
        #[arg(long, value_parser = parse_patient)]
        patient: Option<Patient>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Learn approximation-error statistics.
    TrainAem {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "STROKE_EIT_WORKERS")]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the conductivity perturbation and contact resistances.
    Reconstruct {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        meas: PathBuf,
        #[arg(long, conflicts_with = "no_aem", required_unless_present = "no_aem")]
        aem: Option<PathBuf>,
        #[arg(long)]
        no_aem: bool,
        /// VTK output.
        #[arg(long)]
        out: PathBuf,
        /// Residual trace CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Result record (JSON); defaults to the VTK path with a `.json` extension.
        #[arg(long)]
        result: Option<PathBuf>,
        /// Proceed despite config-digest mismatches.
        #[arg(long)]
        force: bool,
    },
    /// Export a reconstruction record as VTK and/or a PPM slice image.
    Export {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        vtk: Option<PathBuf>,
        #[arg(long)]
        ppm: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        force: bool,
    },
    /// Print the default configuration.
    DefaultConfig,
}

fn parse_patient(s: &str) -> Result<Patient, String> {
    match s {
        "healthy" => Ok(Patient::Healthy),
        "hemorrhagic" => Ok(Patient::Hemorrhagic),
        "ischemic" => Ok(Patient::Ischemic),
        _ => Err(format!("unknown patient {s:?} (healthy, hemorrhagic, ischemic)")),
    }
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_io() || matches!(e, Error::Format(_)) {
            4
        } else if e.is_numerical() {
            3
        } else {
            2
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_config(arg: &ConfigArg) -> CliResult<PipelineConfig> {
    let Some(path) = &arg.config else {
        return Ok(PipelineConfig::new());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure { code: 4, message: format!("{}: {e}", path.display()) })?;
    PipelineConfig::from_json(&text).map_err(|e| Failure { code: 2, message: format!("{}: {e}", path.display()) })
}

fn check_digest(what: &str, found: &str, expected: &str, force: bool) -> CliResult {
    if found == expected {
        return Ok(());
    }
    let message = format!("{what} was produced with config digest {found}, but the current config has digest {expected}");
    if force {
        eprintln!("warning: {message} (continuing because of --force)");
        Ok(())
    } else {
        Err(Failure { code: 2, message: format!("{message}; rerun with --force to override") })
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate { config, out, csv, case, patient, seed, noise } => {
            let mut cfg = load_config(&config)?;
            if let Some(c) = case {
                cfg.simulation.case = c;
            }
            if let Some(p) = patient {
                cfg.simulation.patient = p;
            }
            if let Some(s) = seed {
                cfg.simulation.seed = s;
            }
            if let Some(n) = noise {
                cfg.simulation.noise_level = n;
            }
            cfg.validate()?;
            let setup = Setup::new(&cfg.model)?;
            let sim = &cfg.simulation;
            let target =
                sample_target(cfg.case(), sim.patient, &cfg.model.table, &setup.basis, &setup.intended_angles(), sim.seed)?;
            let mut record = simulate_measurement(
                &target,
                &setup.basis,
                &setup.sim_reference,
                cfg.model.recon_refinement,
                cfg.feed_index(),
                sim.noise_level,
            )?;
            record.config_digest = cfg.digest();
            io::write_json(&out, &record)?;
            if let Some(p) = csv {
                io::write_atomic(&p, io::measurement_csv(&record.data, record.electrodes).as_bytes())?;
            }
            eprintln!("wrote {} ({} values, noise std {:e})", out.display(), record.data.len(), record.noise.std);
        }
        Command::TrainAem { config, samples, seed, workers, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(n) = samples {
                cfg.aem.samples = n;
            }
            if let Some(s) = seed {
                cfg.aem.seed = s;
            }
            cfg.validate()?;
            let workers = workers
                .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
                .max(1);
            let setup = Setup::new(&cfg.model)?;
            let training = setup.training(&cfg.model, cfg.aem.std_scale);
            let mut em = train_error_model(&training, cfg.aem.samples, cfg.aem.seed, workers)?;
            em.info.config_digest = cfg.digest();
            io::write_error_model(&out, &em)?;
            eprintln!(
                "wrote {} ({} samples, {} resampled, trace {:e})",
                out.display(),
                em.info.samples,
                em.info.failed,
                em.covariance.trace()
            );
        }
        Command::Reconstruct { config, meas, aem, no_aem, out, log, result, force } => {
            let cfg = load_config(&config)?;
            let digest = cfg.digest();
            let record: MeasurementRecord = io::read_json(&meas)?;
            check_digest("measurement", &record.config_digest, &digest, force)?;
            let em = match &aem {
                Some(p) => {
                    let em = io::read_error_model(p)?;
                    check_digest("error model", &em.info.config_digest, &digest, force)?;
                    Some(em)
                }
                None => None,
            };
            let setup = Setup::new(&cfg.model)?;
            if record.electrodes != cfg.model.electrodes || record.feed != cfg.feed_index() {
                return Err(Failure {
                    code: 2,
                    message: format!(
                        "measurement has {} electrodes (feed {}), config {} (feed {})",
                        record.electrodes,
                        record.feed + 1,
                        cfg.model.electrodes,
                        cfg.model.feed
                    ),
                });
            }
            let whitener = build_whitener(em.as_ref(), &record.noise, record.data.len(), !no_aem)?;
            let mut opts = cfg.recon.clone();
            if no_aem {
                opts.stop = StopRule::FirstIncrease;
            }
            let r = reconstruct(&record.data, &setup.surrogate, &setup.sigma0, &whitener, &opts)?;
            let rec = ReconstructionRecord::new(&r, digest, record.seed, !no_aem);
            let result = result.unwrap_or_else(|| out.with_extension("json"));
            io::write_json(&result, &rec)?;
            write_fields(&out, &setup, &rec)?;
            if let Some(p) = log {
                io::write_atomic(&p, io::trace_csv(&r.trace).as_bytes())?;
            }
            eprintln!(
                "stop: {} after {} outer iterations, E = {:.3} (level {:.3})",
                r.stop,
                r.outer_iterations,
                r.final_residual(),
                r.discrepancy
            );
        }
        Command::Export { config, recon, vtk, ppm, size, force } => {
            let cfg = load_config(&config)?;
            let rec: ReconstructionRecord = io::read_json(&recon)?;
            check_digest("reconstruction", &rec.config_digest, &cfg.digest(), force)?;
            let setup = Setup::new(&cfg.model)?;
            if rec.kappa.len() != setup.surrogate.n_nodes() {
                return Err(Failure {
                    code: 2,
                    message: format!("reconstruction has {} nodes, mesh {}", rec.kappa.len(), setup.surrogate.n_nodes()),
                });
            }
            if let Some(p) = vtk {
                write_fields(&p, &setup, &rec)?;
            }
            if let Some(p) = ppm {
                let img = io::ppm_slice(setup.surrogate.mesh(), &rec.kappa, size, None)?;
                io::write_atomic(&p, &img)?;
            }
        }
        Command::DefaultConfig => {
            let text = serde_json::to_string_pretty(&PipelineConfig::new()).expect("config serialises");
            println!("{text}");
        }
    }
    Ok(())
}

fn write_fields(path: &Path, setup: &Setup, rec: &ReconstructionRecord) -> CliResult {
    let title = format!("stroke-eit reconstruction, config {}", rec.config_digest);
    io::write_vtk(path, setup.surrogate.mesh(), &[("kappa", &rec.kappa), ("sigma", &rec.sigma)], &title)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
