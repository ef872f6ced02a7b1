use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dpalloc::harness::{run_experiment, ExperimentConfig, Problem, RepairSpec, DEFAULT_TRIALS};
use dpalloc::io::{emit_report, load_csv, save_csv, synth_generate, ReportFormat, SynthProfile};
use dpalloc::mechanisms::{indist_threshold, Mechanism};
use dpalloc::metrics::DistanceSpace;
use dpalloc::repair::{RepairParams, SlackRule};
use dpalloc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dpalloc",
    version,
    about = "Noisy statistics, allocation rules and fairness metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an epsilon sweep with the standard allocation rule.
    Run(RunArgs),
    /// Run an epsilon sweep with a noise-aware allocation rule.
    #[command(subcommand)]
    Repair(RepairCommand),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Print the indistinguishability threshold ln(1/delta)/epsilon.
    Tau {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
    },
}

#[derive(Subcommand)]
enum RepairCommand {
    /// Posterior coverage repair on D-Laplace releases.
    Vra {
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[command(flatten)]
        shared: SharedArgs,
    },
    /// Inflationary Title I allocation.
    Title1 {
        #[arg(long)]
        delta: f64,
        /// Use ln(2k/delta)/epsilon instead of twice that for the per-district slack.
        #[arg(long)]
        short_slack: bool,
        #[command(flatten)]
        shared: SharedArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    problem: ProblemArg,
    #[arg(long, value_enum)]
    mechanism: MechanismArg,
    #[command(flatten)]
    shared: SharedArgs,
}

#[derive(Args)]
struct SharedArgs {
    /// Comma-separated privacy budgets.
    #[arg(long, value_delimiter = ',', required = true)]
    epsilon: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Overrides the mechanism where it is a choice (repair commands).
    #[arg(long = "with-mechanism", value_enum, hide = true)]
    with_mechanism: Option<MechanismArg>,
    /// GroupSmooth budget share spent on choosing the partition.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    max_bucket: Option<usize>,
    #[arg(long)]
    seats: Option<u32>,
    /// Report distances to the VRA boundary in units of the noise scale.
    #[arg(long)]
    scaled_distance: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    profile: ProfileArg,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Vra,
    Title1,
    Apportionment,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Laplace,
    Dlaplace,
    Groupsmooth,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    CsvLong,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    MichiganLike,
    FloridaLike,
    IndiaLike,
}

impl From<ProblemArg> for Problem {
    fn from(p: ProblemArg) -> Self {
        match p {
            ProblemArg::Vra => Problem::Vra,
            ProblemArg::Title1 => Problem::Title1,
            ProblemArg::Apportionment => Problem::Apportionment,
        }
    }
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Laplace => Mechanism::Laplace,
            MechanismArg::Dlaplace => Mechanism::DLaplace,
            MechanismArg::Groupsmooth => Mechanism::GroupSmooth,
        }
    }
}

impl From<ProfileArg> for SynthProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::MichiganLike => SynthProfile::MichiganLike,
            ProfileArg::FloridaLike => SynthProfile::FloridaLike,
            ProfileArg::IndiaLike => SynthProfile::IndiaLike,
        }
    }
}

fn sweep(
    problem: Problem,
    mechanism: Mechanism,
    repair: Option<RepairSpec>,
    a: SharedArgs,
) -> Result<()> {
    let mut cfg = ExperimentConfig::new(problem, mechanism, a.epsilon);
    cfg.n_trials = a.trials;
    cfg.base_seed = a.seed;
    cfg.threads = a.threads;
    cfg.params.repair = repair;
    if let Some(rho) = a.rho {
        cfg.params.group_smooth.rho = rho;
    }
    cfg.params.group_smooth.max_bucket = a.max_bucket;
    if let Some(seats) = a.seats {
        cfg.params.seats = seats;
    }
    if a.scaled_distance {
        cfg.params.distance_space = DistanceSpace::NoiseScaled;
    }
    cfg.data_path = Some(a.data.clone());
    cfg.validate()?;
    let data = load_csv(&a.data, problem)?;
    let report = run_experiment(&cfg, &data)?;
    let format = match a.format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::CsvLong => ReportFormat::CsvLong,
    };
    emit_report(&report, format, &a.out)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(r) => sweep(r.problem.into(), r.mechanism.into(), None, r.shared),
        Command::Repair(RepairCommand::Vra { p, samples, shared }) => {
            let mech = shared
                .with_mechanism
                .map_or(Mechanism::DLaplace, Into::into);
            let params = RepairParams {
                p,
                n_samples: samples,
            };
            sweep(Problem::Vra, mech, Some(RepairSpec::Vra(params)), shared)
        }
        Command::Repair(RepairCommand::Title1 {
            delta,
            short_slack,
            shared,
        }) => {
            let mech = shared.with_mechanism.map_or(Mechanism::Laplace, Into::into);
            let rule = if short_slack {
                SlackRule::Short
            } else {
                SlackRule::Proof
            };
            sweep(
                Problem::Title1,
                mech,
                Some(RepairSpec::Title1 { delta, rule }),
                shared,
            )
        }
        Command::Synth(s) => {
            let m = synth_generate(s.profile.into(), s.n, s.seed)?;
            save_csv(&m, &s.out)
        }
        Command::Tau { epsilon, delta } => {
            println!("{}", indist_threshold(epsilon, delta)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            report_chain(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report_chain(e: &Error) {
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}
