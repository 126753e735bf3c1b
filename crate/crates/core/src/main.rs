use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _};
use clap::{Parser, Subcommand};

use patchnet::actors::Mode;
use patchnet::harness::scenarios::Attack;
use patchnet::harness::{run, RunReport, ScenarioConfig};

#[derive(Parser)]
#[command(name = "patchnet", about = "Deterministic simulation of incentivised IoT update delivery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Write the JSONL trace here (one file per seed with `--seeds`).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    check_lemmas: bool,
    /// Attack name, or `all` for the suite.
    #[arg(long)]
    attack: Option<String>,
    /// Inclusive-exclusive range `A..B`.
    #[arg(long, value_parser = parse_range, conflicts_with = "seed")]
    seeds: Option<(u64, u64)>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "standard" => Ok(Mode::Standard),
        "legacy-leiba" => Ok(Mode::LegacyLeiba),
        _ => Err(format!("unknown mode {s}; expected standard or legacy-leiba")),
    }
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a >= b {
        return Err("empty seed range".into());
    }
    Ok((a, b))
}

/// Most severe first: a real failure beats an anticipated legacy break.
fn combine(a: i32, b: i32) -> i32 {
    let rank = |c| match c {
        1 => 3,
        2 => 4,
        3 => 2,
        _ => 0,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

fn trace_path(base: &Path, seed: u64, suffix: Option<&str>, many: bool) -> PathBuf {
    if !many && suffix.is_none() {
        return base.to_path_buf();
    }
    let mut name = base.file_stem().unwrap_or_default().to_os_string();
    if let Some(s) = suffix {
        name.push(format!("-{s}"));
    }
    if many {
        name.push(format!("-{seed}"));
    }
    if let Some(ext) = base.extension() {
        name.push(".");
        name.push(ext);
    }
    base.with_file_name(name)
}

fn write_trace(report: &RunReport, path: &Path) -> anyhow::Result<()> {
    std::fs::write(path, report.trace.to_jsonl()).with_context(|| format!("writing {}", path.display()))
}

fn summary(report: &RunReport) -> String {
    let paid = report.count(|e| matches!(e, patchnet::harness::trace::EventKind::PaymentToD { .. }));
    format!(
        "seed {}: {} blocks, {}/{} installed, {} distributor payments, {} trace events",
        report.seed,
        report.blocks,
        report.installed(),
        report.devices.len(),
        paid,
        report.trace.len()
    )
}

fn print_lemmas(report: &RunReport) {
    for l in &report.lemmas {
        if l.holds {
            println!("  lemma {}: holds", l.lemma);
        } else {
            println!("  lemma {}: VIOLATED", l.lemma);
            for e in &l.counterexample {
                println!("    {}", serde_json::to_string(e).unwrap_or_default());
            }
        }
    }
}

fn execute(args: &RunArgs) -> anyhow::Result<i32> {
    let mut base = ScenarioConfig::load(&args.config)?;
    if let Some(m) = args.mode {
        base.mode = m;
    }
    let seeds: Vec<u64> = match (args.seeds, args.seed) {
        (Some((a, b)), _) => (a..b).collect(),
        (None, Some(s)) => vec![s],
        (None, None) => vec![base.seed],
    };
    let many = seeds.len() > 1;
    let attacks: Vec<Attack> = match args.attack.as_deref() {
        None => Vec::new(),
        Some("all") => Attack::SUITE.to_vec(),
        Some(name) => match Attack::from_name(name) {
            Some(a) => vec![a],
            None => bail!(ConfigErrorExit(format!("unknown attack {name}"))),
        },
    };

    let mut code = 0;
    for seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        if attacks.is_empty() {
            let report = run(&cfg)?;
            println!("{}", summary(&report));
            if args.check_lemmas {
                print_lemmas(&report);
            }
            for v in report.unexpected_violations() {
                println!("  unexpected violation: {v}");
            }
            if let Some(t) = &args.trace {
                write_trace(&report, &trace_path(t, seed, None, many))?;
            }
            code = combine(code, report.exit_code(args.check_lemmas));
            continue;
        }
        for attack in &attacks {
            let report = run(&attack.configure(&cfg))?;
            let verdict = attack.evaluate(&report);
            let status = if verdict.defeated() { "defeated" } else { "SUCCEEDED" };
            println!("attack {attack} (seed {seed}, {:?}): {status}", cfg.mode);
            for c in verdict.failed_checks() {
                println!("  failed: {c}");
            }
            if args.check_lemmas {
                print_lemmas(&report);
            }
            if let Some(t) = &args.trace {
                write_trace(&report, &trace_path(t, seed, Some(attack.name()), many))?;
            }
            code = combine(code, verdict.exit_code());
        }
    }
    Ok(code)
}

#[derive(Debug)]
struct ConfigErrorExit(String);

impl std::fmt::Display for ConfigErrorExit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigErrorExit {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    match execute(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.is::<patchnet::harness::ConfigError>() || e.is::<ConfigErrorExit>();
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
