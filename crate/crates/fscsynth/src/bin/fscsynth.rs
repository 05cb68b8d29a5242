//! Command-line front end: synthesize controllers, evaluate a given FSC,
//! or run the brute-force enumeration oracle.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use fscsynth::checker::{check_constraint, eval_mc};
use fscsynth::enumerate::enumerate_family;
use fscsynth::family::{induced_mc, make_reduced_family, Fsc, MemoryModel};
use fscsynth::inner::{Budget, InnerConfig, Method};
use fscsynth::model::{normalize_initial, OptDir, Pomdp, PropKind, Relation, Specification};
use fscsynth::outer::{synthesize, OuterConfig, OuterOutcome};
use fscsynth::parse::{parse_fsc, parse_model, parse_spec, write_fsc};

#[derive(Parser)]
#[command(
    name = "fscsynth",
    version,
    about = "Inductive synthesis of deterministic finite-state controllers for POMDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ar,
    Cegis,
    Hybrid,
}

#[derive(Subcommand)]
enum Command {
    /// Search for admissible FSCs, streaming improvements as they are found
    Synthesize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Inner search: abstraction refinement, counterexample pruning, or both
        #[arg(long, value_enum, default_value = "ar")]
        method: MethodArg,
        /// Keep every family member reachable (exact inner optimum)
        #[arg(long)]
        complete: bool,
        /// Disable symmetry reduction after memory injection
        #[arg(long)]
        no_symmetry: bool,
        /// Maximum number of memory nodes per observation
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
        memory_limit: u32,
        /// Wall-clock budget in seconds
        #[arg(long)]
        timeout: Option<f64>,
        /// Relative improvement margin for the running optimum
        #[arg(long, default_value_t = 0.0)]
        eps_rel: f64,
        /// Absolute improvement margin for the running optimum
        #[arg(long, default_value_t = 1e-9)]
        eps_abs: f64,
        /// Write the best FSC to this file
        #[arg(long)]
        fsc_out: Option<PathBuf>,
        /// Write the statistics record to this file
        #[arg(long)]
        stats_out: Option<PathBuf>,
    },
    /// Evaluate a given FSC file exactly against model and specification
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        fsc: PathBuf,
    },
    /// Evaluate every member of a family and report the true optimum
    Enumerate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Uniform memory model: k nodes for every observation
        #[arg(long, conflicts_with = "mu")]
        full_k: Option<usize>,
        /// Per-observation node budgets, e.g. z1=2,z4=2 (unlisted default to 1)
        #[arg(long)]
        mu: Option<String>,
        /// Refuse to enumerate families larger than this
        #[arg(long, default_value_t = 1_000_000)]
        cap: u128,
    },
}

struct InputError(String);

fn at_path(e: impl std::fmt::Display, path: &Path) -> InputError {
    InputError(format!("{}: {e}", path.display()))
}

fn load_model(path: &Path) -> Result<Pomdp, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| at_path(e, path))?;
    let pomdp = parse_model(&text).map_err(|e| at_path(e, path))?;
    // a distribution initial becomes a point mass at a bootstrap state;
    // controllers then carry a row for the fresh bootstrap observation
    Ok(normalize_initial(&pomdp))
}

fn load_spec(path: &Path, pomdp: &Pomdp) -> Result<Specification, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| at_path(e, path))?;
    let spec = parse_spec(&text).map_err(|e| at_path(e, path))?;
    spec.validate(pomdp).map_err(|e| at_path(e, path))?;
    Ok(spec)
}

fn load_fsc(path: &Path, pomdp: &Pomdp) -> Result<Fsc, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| at_path(e, path))?;
    let fsc = parse_fsc(&text, pomdp).map_err(|e| at_path(e, path))?;
    Ok(fsc)
}

/// Parses `z1=2,z4=2` (or `1=2,4=2`) into per-observation node budgets.
fn parse_mu(text: &str, num_obs: usize) -> Result<MemoryModel, String> {
    let mut memory = MemoryModel::uniform(num_obs, 1);
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (obs, k) = part
            .split_once('=')
            .ok_or_else(|| format!("`{part}`: expected z<obs>=<nodes>"))?;
        let obs = obs.trim().strip_prefix('z').unwrap_or(obs.trim());
        let z: usize = obs
            .parse()
            .map_err(|_| format!("`{part}`: bad observation index"))?;
        if z >= num_obs {
            return Err(format!(
                "`{part}`: observation {z} out of range (model has {num_obs})"
            ));
        }
        let k: usize = k
            .trim()
            .parse()
            .map_err(|_| format!("`{part}`: bad node count"))?;
        if k == 0 {
            return Err(format!("`{part}`: node count must be positive"));
        }
        memory.budget[z] = k;
    }
    Ok(memory)
}

fn constraint_text(spec: &Specification, i: usize) -> String {
    let c = &spec.constraints[i];
    format!(
        "{} {} {} reach {}",
        match c.kind {
            PropKind::Probability => "P",
            PropKind::ExpectedReward => "R",
        },
        match c.relation {
            Relation::Geq => ">=",
            Relation::Leq => "<=",
        },
        c.threshold,
        c.label
    )
}

fn stats_record(out: &OuterOutcome, exit: u8) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "exit {exit}");
    match &out.incumbent {
        Some(inc) => {
            let _ = writeln!(s, "value {}", inc.value);
            let _ = writeln!(s, "nodes {}", inc.fsc.nodes);
        }
        None => {
            let _ = writeln!(s, "value none");
        }
    }
    let _ = writeln!(s, "base-bound {}", out.base_bound);
    let _ = writeln!(s, "globally-optimal {}", out.globally_optimal);
    let _ = writeln!(s, "saturated {}", out.saturated);
    let _ = writeln!(s, "fallback-ran {}", out.fallback_ran);
    let _ = writeln!(
        s,
        "injections {}",
        out.injections
            .iter()
            .map(|z| format!("z{z}"))
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(
        s,
        "memory {}",
        out.memory
            .budget
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(s, "rounds {}", out.stats.rounds);
    let _ = writeln!(s, "families-analyzed {}", out.stats.families_analyzed);
    let _ = writeln!(s, "members-pruned {}", out.stats.members_pruned);
    let _ = writeln!(s, "candidates-evaluated {}", out.stats.candidates_evaluated);
    let _ = writeln!(s, "conflicts-learned {}", out.stats.conflicts_learned);
    let _ = writeln!(s, "incumbents {}", out.stats.incumbents);
    let _ = writeln!(s, "wall-seconds {:.6}", out.wall.as_secs_f64());
    s
}

#[allow(clippy::too_many_arguments)]
fn run_synthesize(
    model: &Path,
    spec_path: &Path,
    method: MethodArg,
    complete: bool,
    no_symmetry: bool,
    memory_limit: u32,
    timeout: Option<f64>,
    eps_rel: f64,
    eps_abs: f64,
    fsc_out: Option<&Path>,
    stats_out: Option<&Path>,
) -> Result<u8, InputError> {
    let pomdp = load_model(model)?;
    let spec = load_spec(spec_path, &pomdp)?;
    if let Some(t) = timeout {
        if !(t > 0.0) {
            return Err(InputError("--timeout must be positive".into()));
        }
    }
    let cfg = OuterConfig {
        inner: InnerConfig {
            method: match method {
                MethodArg::Ar => Method::Ar,
                MethodArg::Cegis => Method::Cegis,
                MethodArg::Hybrid => Method::Hybrid,
            },
            complete,
            eps_rel,
            eps_abs,
            ..InnerConfig::default()
        },
        symmetry: !no_symmetry,
        memory_limit: memory_limit as usize,
    };
    let budget = match timeout {
        Some(t) => Budget::with_timeout(Duration::from_secs_f64(t)),
        None => Budget::unlimited(),
    };
    // watchdog: request cooperative cancellation at the deadline
    let _watchdog = budget.deadline.map(|deadline| {
        let cancel = budget.cancel.clone();
        std::thread::spawn(move || loop {
            let now = std::time::Instant::now();
            if now >= deadline {
                cancel.store(true, std::sync::atomic::Ordering::Relaxed);
                return;
            }
            std::thread::sleep((deadline - now).min(Duration::from_millis(50)));
        })
    });
    let outcome = synthesize(
        &pomdp,
        &spec,
        &cfg,
        &budget,
        &mut |_, value, at| println!("incumbent {value} at {:.6}s", at.as_secs_f64()),
        &mut |msg| eprintln!("{msg}"),
    )
    .map_err(|e| InputError(e.to_string()))?;
    let exit = if outcome.incumbent.is_some() { 0 } else { 2 };
    match &outcome.incumbent {
        Some(inc) => {
            println!();
            print!("{}", write_fsc(&inc.fsc, &pomdp, Some(inc.value)));
            if let Some(path) = fsc_out {
                std::fs::write(path, write_fsc(&inc.fsc, &pomdp, Some(inc.value)))
                    .map_err(|e| at_path(e, path))?;
            }
        }
        None => {
            println!("no admissible controller found");
            println!("relaxation bound {}", outcome.base_bound);
        }
    }
    let stats = stats_record(&outcome, exit);
    println!();
    print!("{stats}");
    if let Some(path) = stats_out {
        std::fs::write(path, stats).map_err(|e| at_path(e, path))?;
    }
    Ok(exit)
}

fn run_evaluate(model: &Path, spec_path: &Path, fsc_path: &Path) -> Result<u8, InputError> {
    let pomdp = load_model(model)?;
    let spec = load_spec(spec_path, &pomdp)?;
    let fsc = load_fsc(fsc_path, &pomdp)?;
    let memory = MemoryModel::uniform(pomdp.num_obs, fsc.nodes);
    let objective_targets = pomdp
        .target_mask(&spec.objective.label)
        .map_err(|e| at_path(e, model))?;
    let mut product = induced_mc(&pomdp, &fsc, &memory, &objective_targets)
        .map_err(|e| InputError(e.to_string()))?;
    let mut admissible = true;
    for (i, c) in spec.constraints.iter().enumerate() {
        let mask = pomdp.target_mask(&c.label).map_err(|e| at_path(e, model))?;
        product.set_targets(&mask);
        let v = eval_mc(&product.mc, c.kind).map_err(|e| InputError(e.to_string()))?;
        let value = v.at(product.mc.initial);
        let ok = check_constraint(value, c);
        admissible &= ok;
        println!(
            "constraint {}: {} = {value} ({})",
            i + 1,
            constraint_text(&spec, i),
            if ok { "satisfied" } else { "violated" }
        );
    }
    product.set_targets(&objective_targets);
    let value = eval_mc(&product.mc, spec.objective.kind)
        .map_err(|e| InputError(e.to_string()))?
        .at(product.mc.initial);
    println!(
        "objective: {} {} reach {} = {value}",
        match spec.objective.kind {
            PropKind::Probability => "P",
            PropKind::ExpectedReward => "R",
        },
        match spec.objective.direction {
            OptDir::Max => "max",
            OptDir::Min => "min",
        },
        spec.objective.label,
    );
    if spec.objective.kind == PropKind::ExpectedReward {
        // expected rewards are defined only under almost-sure reachability
        let reach = eval_mc(&product.mc, PropKind::Probability)
            .map_err(|e| InputError(e.to_string()))?
            .at(product.mc.initial);
        let ok = reach >= 1.0 - 1e-9;
        admissible &= ok;
        println!(
            "implicit: P >= 1 reach {} = {reach} ({})",
            spec.objective.label,
            if ok { "satisfied" } else { "violated" }
        );
    }
    admissible &= value.is_finite();
    println!("admissible {admissible}");
    Ok(if admissible { 0 } else { 2 })
}

fn run_enumerate(
    model: &Path,
    spec_path: &Path,
    full_k: Option<usize>,
    mu: Option<&str>,
    cap: u128,
) -> Result<u8, InputError> {
    let pomdp = load_model(model)?;
    let spec = load_spec(spec_path, &pomdp)?;
    let memory = match (full_k, mu) {
        (Some(k), None) => {
            if k == 0 {
                return Err(InputError("--full-k must be positive".into()));
            }
            MemoryModel::uniform(pomdp.num_obs, k)
        }
        (None, Some(text)) => parse_mu(text, pomdp.num_obs).map_err(InputError)?,
        (None, None) => MemoryModel::uniform(pomdp.num_obs, 1),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };
    let family = make_reduced_family(&pomdp, &memory);
    println!("members {}", family.member_count());
    let out =
        enumerate_family(&pomdp, &spec, &family, cap).map_err(|e| InputError(e.to_string()))?;
    println!("admissible {}", out.admissible);
    match &out.best {
        Some((fsc, eval, _)) => {
            println!("optimum {}", eval.objective_value);
            println!();
            print!("{}", write_fsc(fsc, &pomdp, Some(eval.objective_value)));
            Ok(0)
        }
        None => {
            println!("optimum none");
            Ok(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synthesize {
            model,
            spec,
            method,
            complete,
            no_symmetry,
            memory_limit,
            timeout,
            eps_rel,
            eps_abs,
            fsc_out,
            stats_out,
        } => run_synthesize(
            model,
            spec,
            *method,
            *complete,
            *no_symmetry,
            *memory_limit,
            *timeout,
            *eps_rel,
            *eps_abs,
            fsc_out.as_deref(),
            stats_out.as_deref(),
        ),
        Command::Evaluate { model, spec, fsc } => run_evaluate(model, spec, fsc),
        Command::Enumerate {
            model,
            spec,
            full_k,
            mu,
            cap,
        } => run_enumerate(model, spec, *full_k, mu.as_deref(), *cap),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(InputError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
