//! Command-line surface: simulation, detection, fitting, fluence and
//! report generation with reproducible seeds and CSV outputs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qburst::config::{load_config_with_overrides, ExperimentConfig};
use qburst::fluence::{
    histogram_mode, sample_deposition, scintillator_spectrum, DepositionModel, FluenceEstimate,
    Spectrum, PLASTIC_SCINTILLATOR, SILICON,
};
use qburst::pipeline;
use qburst::report;
use qburst::Result;

#[derive(Parser)]
#[command(name = "qburst", version, about = "Radiation-burst qubit-error simulator and analysis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the basis-preparation campaign (both preps at every delay).
    Simulate(SimArgs),
    /// Simulate a Ramsey interferometry run.
    SimulateRamsey(SimArgs),
    /// Energized vs de-energized bending-magnet comparison.
    ControlTest(SimArgs),
    /// Classify events and write aligned traces.
    Detect(IoArgs),
    /// Detection plus SPAM estimation and the global rate-model fits.
    FitRates(IoArgs),
    /// Ramsey scan, down-selection, alignment and transient-recovery fits.
    FitRamsey(IoArgs),
    /// Fluence statistics, scintillator spectrum and deposition samples.
    Fluence(FluenceArgs),
    /// Full pipeline: detect -> align -> fit -> report.
    Report(IoArgs),
}

#[derive(Args)]
struct SimArgs {
    /// Configuration file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for shot files and the manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Dotted-path config overrides (key=value), applied in order, last wins.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl SimArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let text = match &self.config {
            Some(path) => std::fs::read_to_string(path)?,
            None => String::new(),
        };
        load_config_with_overrides(&text, &self.overrides)
    }
}

#[derive(Args)]
struct IoArgs {
    /// Directory holding .qshot inputs.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for CSV artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct FluenceArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Detected fraction of linac pulses at the scintillator.
    #[arg(long, default_value_t = 0.749)]
    p_d: f64,
    /// Single-particle detector efficiency.
    #[arg(long, default_value_t = 1.0)]
    eps_d: f64,
    /// Inside/outside fluence ratio from the calibration runs.
    #[arg(long, default_value_t = 0.177)]
    r_io: f64,
    /// Gaussian detector resolution entering the spectrum, keV.
    #[arg(long, default_value_t = 50.0)]
    sigma_kev: f64,
    /// Landau samples per deposition histogram.
    #[arg(long, default_value_t = 400_000)]
    n_samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn configure_workers() {
    if let Ok(v) = std::env::var("QBURST_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn cmd_control_test(args: &SimArgs) -> Result<()> {
    let config = args.load()?;
    std::fs::create_dir_all(&args.out)?;
    let result = pipeline::control_test(&config, args.seed)?;
    report::write_csv(
        &args.out.join("control_test.csv"),
        &["magnet_state,event_rate"],
        &[
            vec!["energized".into(), format!("{:.6e}", result.energized_rate)],
            vec!["de-energized".into(), format!("{:.6e}", result.deenergized_rate)],
        ],
    )?;
    let ids: Vec<String> = config.qubits.iter().map(|q| q.id.clone()).collect();
    report::write_traces_csv(
        &args.out.join("control_test_deenergized_trace.csv"),
        &result.deenergized_aligned,
        &ids,
    )?;
    report::write_manifest(&args.out, &config, args.seed, &[("command", "control-test".into())])?;
    println!(
        "event rate energized {:.4}, de-energized {:.4}",
        result.energized_rate, result.deenergized_rate
    );
    Ok(())
}

fn write_spectrum_csv(path: &Path, spec: &Spectrum) -> Result<()> {
    let rows: Vec<Vec<String>> = spec
        .energy_kev
        .iter()
        .zip(&spec.density)
        .map(|(&e, &d)| vec![format!("{e:.3}"), format!("{d:.6e}")])
        .collect();
    report::write_csv(
        path,
        &[
            "energy_kev,density",
            &format!("bin_width_kev={}", spec.bin_width_kev),
        ],
        &rows,
    )
}

fn write_histogram_csv(path: &Path, samples: &[f64], bin_width: f64) -> Result<()> {
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &s in samples {
        *counts.entry((s / bin_width).floor() as i64).or_insert(0) += 1;
    }
    let n = samples.len() as f64;
    let rows: Vec<Vec<String>> = counts
        .iter()
        .map(|(&bin, &c)| {
            vec![
                format!("{:.3}", (bin as f64 + 0.5) * bin_width),
                format!("{:.6e}", c as f64 / n / bin_width),
            ]
        })
        .collect();
    report::write_csv(
        path,
        &["energy_kev,density", &format!("bin_width_kev={bin_width}")],
        &rows,
    )
}

fn cmd_fluence(args: &FluenceArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let est = FluenceEstimate::from_detection(args.p_d, args.eps_d, args.r_io)?;
    report::write_csv(
        &args.out.join("fluence.csv"),
        &["p_d,eps_d,lambda_per_pulse,r_io,lambda_at_chip"],
        &[vec![
            format!("{:.6}", est.p_d),
            format!("{:.6}", est.eps_d),
            format!("{:.6}", est.lambda_p),
            format!("{:.6}", est.r_io),
            format!("{:.6}", est.lambda_p * est.r_io),
        ]],
    )?;

    let sc_model = DepositionModel::linac_electron(&PLASTIC_SCINTILLATOR, 4000.0);
    let spec = scintillator_spectrum(est.lambda_p, sc_model.mpv_kev, args.sigma_kev, 4, 2.0)?;
    write_spectrum_csv(&args.out.join("scintillator_spectrum.csv"), &spec)?;

    let si_model = DepositionModel::linac_electron(&SILICON, 350.0);
    let si_samples = sample_deposition(&si_model, args.n_samples, args.seed);
    write_histogram_csv(&args.out.join("deposition_silicon_350um.csv"), &si_samples, 5.0)?;
    let sc_samples = sample_deposition(&sc_model, args.n_samples, args.seed);
    write_histogram_csv(&args.out.join("deposition_scintillator_4mm.csv"), &sc_samples, 20.0)?;

    println!(
        "lambda {:.4} per pulse ({:.4} at the chip); Si-350um deposition mode {:.0} keV, \
         scintillator mode {:.0} keV",
        est.lambda_p,
        est.lambda_p * est.r_io,
        histogram_mode(&si_samples, 5.0),
        histogram_mode(&sc_samples, 20.0),
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => {
            let config = args.load()?;
            let paths = pipeline::simulate_campaign(&config, args.seed, &args.out)?;
            println!("wrote {} runs to {}", paths.len(), args.out.display());
            Ok(())
        }
        Command::SimulateRamsey(args) => {
            let config = args.load()?;
            let path = pipeline::simulate_ramsey_campaign(&config, args.seed, &args.out)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::ControlTest(args) => cmd_control_test(args),
        Command::Detect(args) => {
            let det = pipeline::detect_to_dir(&args.input, &args.out)?;
            println!(
                "mean relaxation event rate {:.4} over {} delays",
                det.mean_relaxation_rate,
                det.relaxation.len()
            );
            Ok(())
        }
        Command::FitRates(args) => {
            let (_, fits) = pipeline::fit_rates_to_dir(&args.input, &args.out)?;
            for f in &fits {
                println!(
                    "{}: a_rel {:.0} kHz, tau_rel {:.0} us{}",
                    f.id,
                    f.fit.params.a_rel,
                    f.fit.params.tau_rel,
                    if f.fit.converged { "" } else { " (not converged)" }
                );
            }
            Ok(())
        }
        Command::FitRamsey(args) => {
            let r = pipeline::fit_ramsey_to_dir(
                &args.input,
                &args.out,
                &pipeline::RamseyOptions::default(),
            )?;
            println!(
                "{} events ({} kept); detuning transient {:.1} kHz, tau {:.0} us",
                r.scan.events.len(),
                r.kept.len(),
                r.detuning_recovery.a,
                r.detuning_recovery.tau
            );
            Ok(())
        }
        Command::Fluence(args) => cmd_fluence(args),
        Command::Report(args) => {
            pipeline::full_pipeline(&args.input, &args.out)?;
            println!("report written to {}", args.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    configure_workers();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
