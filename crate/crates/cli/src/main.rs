use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use qst_core::harness::output::{read_schedule, write_csv, write_json, ScheduleFile};
use qst_core::harness::{
    arm_trajectory_rows, calibrate_hm, gap_table, in_pool, replay_schedule, run_fidelity_trace, run_sweep,
    trajectory_rows, ControlArm, Manifest, RunConfig, RunRecord, Sweep, SweepParameter,
};
use qst_core::hamiltonian::LindbladKind;

#[derive(Parser)]
#[command(name = "qst", version, about = "State-transfer simulations on an XY spin chain in a non-Markovian bath")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory under the configured control arm.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Run several arms side by side instead of `--control`.
        #[arg(long, value_delimiter = ',')]
        arms: Vec<ControlArm>,
        /// Replay a schedule file written by `optimize`.
        #[arg(long, conflicts_with = "arms")]
        schedule: Option<PathBuf>,
    },
    /// Optimize the pulse amplitudes with Adam.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        xi: Option<f64>,
    },
    /// Sweep one parameter over a grid for several control arms.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// gamma_coupling, gamma_bath, temperature, n_sites or lindblad.
        #[arg(long)]
        parameter: SweepParameter,
        /// Comma-separated values; the default grid of the parameter if omitted.
        #[arg(long)]
        values: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "none,ideal,adam")]
        arms: Vec<ControlArm>,
        /// Adam iteration cap per sweep point.
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Tabulate the instantaneous gap of the uncontrolled Hamiltonian.
    Gap {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Scan h_m on the closed chain under ideal pulses.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.99)]
        target: f64,
        #[arg(long, default_value_t = 0.1)]
        lo: f64,
        #[arg(long, default_value_t = 2.0)]
        hi: f64,
        #[arg(long, default_value_t = 96)]
        points: usize,
        /// Write the configuration with the calibrated h_m to this file.
        #[arg(long)]
        save_config: Option<PathBuf>,
    },
}

/// Flags shared by every subcommand. Each overrides the key of the same name
/// in `--config`.
#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; defaults to `<command>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_sites: Option<usize>,
    #[arg(long)]
    gamma_coupling: Option<f64>,
    #[arg(long)]
    gamma_bath: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    lindblad: Option<LindbladKind>,
    #[arg(long)]
    control: Option<ControlArm>,
    #[arg(long)]
    pulse_strength: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    h_m: Option<f64>,
    #[arg(long)]
    total_time: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Integrate the Markov-limit Lindblad equation.
    #[arg(long)]
    markov: bool,
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(n_sites, gamma_coupling, gamma_bath, temperature, lindblad, control, pulse_strength, tau, h_m, total_time, steps, seed);
        if self.dt.is_some() {
            cfg.dt = self.dt;
        } else if self.steps.is_some() {
            cfg.dt = None;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.markov |= self.markov;
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(format!("{command}.csv")))
    }
}

fn schedule_path(out: &Path) -> PathBuf {
    out.with_extension("schedule.json")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprint!("{e}");
            report("usage", &e.kind().to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<qst_core::Error>().map_or("runtime", qst_core::Error::kind);
            report(kind, &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

/// Single-line `error kind=... message="..."` report on stderr.
fn report(kind: &str, message: &str) {
    eprintln!("error kind={kind} message={message:?}");
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { common, arms, schedule } => simulate(&common, &arms, schedule.as_deref()),
        Command::Optimize { common, k_max, lambda, xi } => {
            let mut cfg = common.config()?;
            cfg.control = ControlArm::Adam;
            cfg.k_max = k_max.unwrap_or(cfg.k_max);
            cfg.lambda = lambda.unwrap_or(cfg.lambda);
            cfg.xi = xi.unwrap_or(cfg.xi);
            cfg.validate()?;
            optimize(&cfg, &common.out("optimize"))
        }
        Command::Sweep {
            common,
            parameter,
            values,
            arms,
            k_max,
        } => {
            let mut cfg = common.config()?;
            cfg.k_max = k_max.unwrap_or(cfg.k_max);
            let sweep = match values {
                Some(list) => Sweep::parse(parameter, &list)?,
                None => Sweep::default_grid(parameter),
            };
            let result = run_sweep(&cfg, &sweep, &arms)?;
            let mut manifest = Manifest::new("sweep", &cfg);
            manifest.sweep = Some(sweep);
            let rows = result.rows();
            let out = common.out("sweep");
            write_csv(&out, &manifest, &rows)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("points={} failed={failed} out={}", rows.len(), out.display());
            Ok(())
        }
        Command::Gap { common, points } => {
            let cfg = common.config()?;
            let rows = gap_table(&cfg.chain()?, points)?;
            let out = common.out("gap");
            write_csv(&out, &Manifest::new("gap", &cfg), &rows)?;
            println!("points={} out={}", rows.len(), out.display());
            Ok(())
        }
        Command::Calibrate {
            common,
            target,
            lo,
            hi,
            points,
            save_config,
        } => {
            let cfg = common.config()?;
            let cal = calibrate_hm(&cfg, target, lo, hi, points)?;
            let out = common.out("calibrate");
            write_csv(&out, &Manifest::new("calibrate", &cfg), &cal.scan)?;
            println!("h_m={} fidelity={} target={target} out={}", cal.best_h_m, cal.best_fidelity, out.display());
            let h_m = cal.check()?;
            if let Some(path) = save_config {
                std::fs::write(&path, RunConfig { h_m, ..cfg }.to_toml())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
    }
}

fn simulate(common: &Common, arms: &[ControlArm], schedule: Option<&Path>) -> Result<()> {
    let cfg = common.config()?;
    let out = common.out("simulate");
    if let Some(path) = schedule {
        let record = replay_schedule(&cfg, read_schedule(path)?.schedule)?;
        write_csv(&out, &record.manifest, &trajectory_rows(&record))?;
        return summarize(&record, &out);
    }
    if !arms.is_empty() {
        let records = in_pool(cfg.workers, arms, |&arm| run_fidelity_trace(&RunConfig { control: arm, ..cfg.clone() }))?
            .into_iter()
            .collect::<qst_core::Result<Vec<_>>>()?;
        write_csv(&out, &Manifest::new("simulate", &cfg), &arm_trajectory_rows(&records))?;
        for r in &records {
            println!("arm={} final_fidelity={} c_max={}", r.arm.name(), r.summary.final_fidelity, r.summary.c_max);
        }
        if let Some(e) = records.iter().find_map(|r| r.summary.error.clone()) {
            anyhow::bail!(e);
        }
        return Ok(());
    }
    let record = run_fidelity_trace(&cfg)?;
    write_csv(&out, &record.manifest, &trajectory_rows(&record))?;
    if let Some(run) = &record.optimizer {
        write_schedule(&out, &record.manifest, run.best_schedule.clone(), record.summary.final_fidelity)?;
    }
    summarize(&record, &out)
}

fn summarize(record: &RunRecord, out: &Path) -> Result<()> {
    println!(
        "final_fidelity={} c_max={} wall_time_s={:.3} out={}",
        record.summary.final_fidelity,
        record.summary.c_max,
        record.summary.wall_time_s,
        out.display()
    );
    match &record.summary.error {
        Some(e) => anyhow::bail!(e.clone()),
        None => Ok(()),
    }
}

fn optimize(cfg: &RunConfig, out: &Path) -> Result<()> {
    let record = run_fidelity_trace(cfg)?;
    let mut manifest = record.manifest.clone();
    manifest.command = "optimize".into();
    let run = record.optimizer.as_ref().expect("adam arm records its optimizer run");
    write_csv(out, &manifest, &run.log)?;
    write_schedule(out, &manifest, run.best_schedule.clone(), record.summary.final_fidelity)?;
    println!(
        "initial_fidelity={} final_fidelity={} c_max={} iterations={} termination={:?} wall_time_s={:.3} out={}",
        run.initial_fidelity,
        record.summary.final_fidelity,
        record.summary.c_max,
        run.k,
        run.termination,
        record.summary.wall_time_s,
        out.display()
    );
    match &record.summary.error {
        Some(e) => anyhow::bail!(e.clone()),
        None => Ok(()),
    }
}

fn write_schedule(out: &Path, manifest: &Manifest, schedule: qst_core::control::PulseSchedule, f: f64) -> Result<()> {
    let file = ScheduleFile {
        manifest: manifest.clone(),
        schedule,
        final_fidelity: f.is_finite().then_some(f),
    };
    write_json(&schedule_path(out), &file)?;
    Ok(())
}
