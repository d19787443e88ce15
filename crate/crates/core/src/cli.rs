//! Command-line front end.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiments::{
    evaluate_prediction, named_experiment, named_experiments, read_runs, read_verdicts, run_dir_name,
    run_experiment, run_with_schedule, ExperimentConfig, VerdictSet, AGGREGATE_FILE,
    VERDICTS_FILE,
};
use crate::neuron::Millis;
use crate::recorder::{aggregate_runs, write_aggregate, RunRecord, SCHEDULE_FILE, SPIKES_FILE, WEIGHTS_FILE};
use crate::stimulus::StimulusSchedule;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CRITERION_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAULT: i32 = 3;

/// Default output root when `--out` is not given.
pub const OUT_ENV: &str = "SNN_PREDICT_OUT";

#[derive(Debug, Parser)]
#[command(name = "snn-predict", version, about = "Spiking network stimulus-prediction experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a named or configured experiment over a batch of seeds.
    Run(RunArgs),
    /// Recompute metrics of a finished experiment and check them against the stored ones.
    Summarize {
        dir: PathBuf,
    },
    /// Re-simulate one stored run from its schedule.
    Replay(ReplayArgs),
    /// List the named experiments.
    List,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub experiment: Option<String>,
    /// TOML experiment definition.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed; run k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_seeds: Option<usize>,
    #[arg(long)]
    pub duration_ms: Option<Millis>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub jitter_ms: Option<Millis>,
    #[arg(long)]
    pub suppression_threshold: Option<f64>,
    #[arg(long)]
    pub stability_threshold: Option<f64>,
    /// Experiment directory [default: $SNN_PREDICT_OUT/<name>-seed<seed>, or runs/...].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: available cores].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Replace an existing completed run.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Run directory holding meta.json and schedule.csv.
    pub run_dir: PathBuf,
    /// Drive the run with this schedule instead of the stored one.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Write the replayed run here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

/// Parses `args` and executes the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::UnknownExperiment { .. }
        | Error::Config(_)
        | Error::InvalidStimulus(_)
        | Error::InvalidParameter(_)
        | Error::UnknownGroup(_)
        | Error::EmptyGroup(_) => EXIT_USAGE,
        _ => EXIT_FAULT,
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run(args) => cmd_run(&args),
        Command::Summarize { dir } => cmd_summarize(&dir),
        Command::Replay(args) => cmd_replay(&args),
        Command::List => {
            for c in named_experiments() {
                println!("{}", c.name);
            }
            Ok(EXIT_PASS)
        }
    }
}

/// Resolves the experiment config from the flags.
pub fn manifest_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.experiment, &args.config) {
        (Some(name), None) => named_experiment(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ExperimentConfig::from_toml(&text)
                .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?
        }
        _ => return Err(Error::Config("give exactly one of --experiment or --config".into())),
    };
    if let Some(n) = args.n_seeds {
        cfg.n_seeds = n;
    }
    if let Some(d) = args.duration_ms {
        cfg = cfg.with_duration(d);
    }
    if let Some(s) = args.noise_sigma {
        cfg.sim.noise_sigma = s;
    }
    if let Some(j) = args.jitter_ms {
        cfg.sequence.inter_interval_jitter = j;
    }
    if let Some(t) = args.suppression_threshold {
        cfg.thresholds.suppression = t;
    }
    if let Some(t) = args.stability_threshold {
        cfg.thresholds.stability = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_out(name: &str, seed: u64) -> PathBuf {
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{name}-seed{seed}"))
}

/// Builds an output tree in a sibling staging directory and moves it into
/// place once `fill` succeeds.
fn publish<F>(out: &Path, force: bool, marker: &str, fill: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    if out.exists() {
        let completed = out.join(marker).exists();
        let empty = out.is_dir() && fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_none();
        if !force && !empty {
            let what = if completed { "a completed run" } else { "existing files" };
            return Err(Error::Config(format!(
                "{} already holds {what}; pass --force to replace it",
                out.display()
            )));
        }
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let leaf = out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    let staging = parent.join(format!(".{leaf}.partial-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;
    if let Err(e) = fill(&staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if out.exists() {
        let removed = if out.is_dir() { fs::remove_dir_all(out) } else { fs::remove_file(out) };
        removed.map_err(|e| Error::io(out, e))?;
    }
    fs::rename(&staging, out).map_err(|e| Error::io(out, e))
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let cfg = manifest_config(args)?;
    let out = args.out.clone().unwrap_or_else(|| default_out(&cfg.name, args.seed));
    if out.join(VERDICTS_FILE).exists() && !args.force {
        return Err(Error::Config(format!(
            "{} already holds a completed run; pass --force to replace it",
            out.display()
        )));
    }
    eprintln!(
        "running {} ({} seeds from {}, {} ms each)",
        cfg.name, cfg.n_seeds, args.seed, cfg.duration
    );
    let result = run_experiment(&cfg, args.seed, args.workers)?;
    publish(&out, args.force, VERDICTS_FILE, |dir| result.write(dir))?;
    print_verdicts(&result.verdicts);
    println!("wrote {}", out.display());
    Ok(verdict_code(&result.verdicts))
}

fn verdict_code(v: &VerdictSet) -> i32 {
    if v.pass {
        EXIT_PASS
    } else {
        EXIT_CRITERION_FAIL
    }
}

pub fn print_verdicts(v: &VerdictSet) {
    println!("{} ({} seeds)", v.experiment, v.n_seeds);
    let width = v.criteria.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &v.criteria {
        println!(
            "  {:<width$}  {:>3}/{:<3} (need {:>3})  {}",
            c.name,
            c.passed,
            c.seeds.len(),
            c.required,
            if c.pass { "PASS" } else { "FAIL" },
        );
    }
    println!("overall: {}", if v.pass { "PASS" } else { "FAIL" });
}

/// Verification problems found in an experiment directory.
pub fn verify_experiment(dir: &Path) -> Result<(Vec<RunRecord>, VerdictSet, Vec<String>)> {
    if !dir.is_dir() {
        return Err(Error::data(dir, "not a directory"));
    }
    let records = read_runs(dir)?;
    let Some(first) = records.first() else {
        return Err(Error::data(dir, "no runs found"));
    };
    let cfg = first.config.clone();
    let mut problems = Vec::new();
    for r in &records {
        for p in r.verify()? {
            problems.push(format!("{}: {p}", run_dir_name(r.seed)));
        }
    }
    let verdicts = evaluate_prediction(&cfg, &records);

    let path = dir.join(VERDICTS_FILE);
    if path.exists() {
        if read_verdicts(&path)? != verdicts {
            problems.push(format!("{VERDICTS_FILE} differs from recomputation"));
        }
    } else {
        problems.push(format!("{VERDICTS_FILE} is missing"));
    }

    let path = dir.join(AGGREGATE_FILE);
    let mut fresh = Vec::new();
    write_aggregate(&mut fresh, &aggregate_runs(&records)?).map_err(|e| Error::data(&path, e.to_string()))?;
    match fs::read(&path) {
        Ok(stored) if stored == fresh => {}
        Ok(_) => problems.push(format!("{AGGREGATE_FILE} differs from recomputation")),
        Err(_) => problems.push(format!("{AGGREGATE_FILE} is missing")),
    }
    Ok((records, verdicts, problems))
}

pub fn cmd_summarize(dir: &Path) -> Result<i32> {
    let (records, verdicts, problems) = verify_experiment(dir)?;
    for r in &records {
        println!("{}: {} spikes", run_dir_name(r.seed), r.summary.spike_count);
        for g in &r.summary.groups {
            let evoked: Vec<String> = g
                .evoked
                .iter()
                .map(|p| p.map_or_else(|| "-".into(), |p| format!("{p:.2}")))
                .collect();
            let rates: Vec<String> = g.epoch_rates.iter().map(|r| format!("{r:.1}")).collect();
            println!(
                "  {:<6} stimuli {:>4}  evoked [{}]  Hz [{}]",
                g.group.to_string(),
                g.stimuli,
                evoked.join(" "),
                rates.join(" ")
            );
        }
    }
    print_verdicts(&verdicts);
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("mismatch: {p}");
        }
        return Err(Error::data(dir, format!("{} stored value(s) disagree with recomputation", problems.len())));
    }
    println!("stored metrics match recomputation");
    Ok(verdict_code(&verdicts))
}

pub fn cmd_replay(args: &ReplayArgs) -> Result<i32> {
    let stored = RunRecord::read_dir(&args.run_dir)?;
    let schedule_path = args.schedule.clone().unwrap_or_else(|| args.run_dir.join(SCHEDULE_FILE));
    let file = fs::File::open(&schedule_path).map_err(|e| Error::io(&schedule_path, e))?;
    let schedule = StimulusSchedule::read_csv(BufReader::new(file), &schedule_path)?;
    let replayed = run_with_schedule(&stored.config, stored.seed, schedule)?;
    if let Some(out) = &args.out {
        publish(out, args.force, crate::recorder::META_FILE, |dir| replayed.write_dir(dir))?;
        println!("wrote {}", out.display());
    }
    if args.schedule.is_some() {
        println!("replayed seed {}: {} spikes", replayed.seed, replayed.summary.spike_count);
        return Ok(EXIT_PASS);
    }
    let same_spikes = replayed.raster == stored.raster;
    let same_weights = replayed.weights == stored.weights;
    println!(
        "{SPIKES_FILE}: {}; {WEIGHTS_FILE}: {}",
        if same_spikes { "identical" } else { "differs" },
        if same_weights { "identical" } else { "differs" }
    );
    if same_spikes && same_weights {
        Ok(EXIT_PASS)
    } else {
        Err(Error::data(&args.run_dir, "replay does not reproduce the stored run"))
    }
}
