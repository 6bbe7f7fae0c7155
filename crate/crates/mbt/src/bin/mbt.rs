//! Command-line front end: validate symbolic models, derive input classes and
//! finite-state abstractions, generate and run complete test suites, score
//! them against seeded mutants, and drive the online system-level campaign.
//! Exit codes: 0 success / all tests pass, 1 test failures or violations,
//! 2 usage or model errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mbt::abstraction::abstract_machine;
use mbt::agents::{render_report, run_campaign, CampaignConfig};
use mbt::eqclass::input_classes;
use mbt::fileio;
use mbt::mutation::{generate_mutants, kill_report};
use mbt::testgen::{concretize, h_method, run_suite, w_method, Outcome, SfsmSut};

#[derive(Parser)]
#[command(name = "mbt", about = "Model-based testing for symbolic finite state machines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum Method {
    H,
    W,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model for determinism, completeness and reachability.
    Validate { model: PathBuf },
    /// Derive the input equivalence classes of a model.
    Classes {
        model: PathBuf,
        /// Write the class table here (.classes).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Abstract a model to a minimized Mealy machine over its input classes.
    Abstract {
        model: PathBuf,
        /// Write the minimized machine here (.fsm).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Generate a complete test suite for a model.
    Gensuite {
        model: PathBuf,
        /// Suite construction method.
        #[arg(long, value_enum, default_value = "h")]
        method: Method,
        /// Upper bound on implementation states; defaults to the minimized
        /// machine's state count.
        #[arg(long)]
        bound: Option<usize>,
        /// Write the concretized suite here (.suite).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a suite against the model's own reference execution.
    ModuleTest {
        model: PathBuf,
        suite: PathBuf,
        /// Write a text/JSON report pair with this stem.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Score a suite against seeded mutants of the model.
    Mutate {
        model: PathBuf,
        suite: PathBuf,
        /// Number of mutants to generate.
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Mutation seed (MBT_SEED overrides the default).
        #[arg(long)]
        seed: Option<u64>,
        /// Write a text/JSON report pair with this stem.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the online system-level campaign on the train controller demo.
    SystemTest {
        /// Executor agents running in parallel.
        #[arg(long, default_value_t = 1)]
        executors: usize,
        /// How many executors are paced at wall-clock cycle time.
        #[arg(long, default_value_t = 0)]
        wall_clock: usize,
        /// Campaign seed (MBT_SEED overrides the default).
        #[arg(long)]
        seed: Option<u64>,
        /// Percentage of normal transitions to cover.
        #[arg(long, default_value_t = 100.0)]
        coverage_target: f64,
        /// Write a text/JSON report pair with this stem.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print the text rendering embedded in a JSON report.
    Report { report: PathBuf },
}

fn env_seed(cli_seed: Option<u64>, fallback: u64) -> u64 {
    if let Some(s) = cli_seed {
        return s;
    }
    std::env::var("MBT_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(fallback)
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_model(path: &Path) -> Result<fileio::ModelFile, String> {
    parse_with(path, fileio::parse_model)
}

fn parse_with<T>(
    path: &Path,
    f: impl Fn(&str) -> Result<T, fileio::FileError>,
) -> Result<T, String> {
    f(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

/// Write `<stem>.txt` and `<stem>.json`; the JSON carries the text rendering
/// in a `text` field so `mbt report` can reproduce it.
fn write_report_pair(
    stem: &Path,
    text: &str,
    mut json: serde_json::Value,
) -> Result<(), String> {
    json["text"] = serde_json::Value::String(text.to_string());
    let txt_path = stem.with_extension("txt");
    let json_path = stem.with_extension("json");
    std::fs::write(&txt_path, text).map_err(|e| format!("{}: {e}", txt_path.display()))?;
    let body = format!("{:#}\n", json);
    std::fs::write(&json_path, body).map_err(|e| format!("{}: {e}", json_path.display()))?;
    eprintln!("wrote {} and {}", txt_path.display(), json_path.display());
    Ok(())
}

fn write_out(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// Exit 1 for failed checks, 2 for usage/model errors.
fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Validate { model } => {
            let mf = load_model(&model)?;
            let report = mf.sfsm.validate();
            if report.is_clean() {
                println!(
                    "{}: ok ({} states, {} transitions)",
                    mf.sfsm.name,
                    mf.sfsm.states.len(),
                    mf.sfsm.transitions.len()
                );
                Ok(true)
            } else {
                for v in &report.violations {
                    println!("{}: {v}", mf.sfsm.name);
                }
                Ok(false)
            }
        }
        Command::Classes { model, out } => {
            let mf = load_model(&model)?;
            let classes = input_classes(&mf.sfsm);
            println!("{}: {} input equivalence classes", mf.sfsm.name, classes.len());
            for c in &classes {
                println!("  {} | {}", c.id, c.predicate);
            }
            if let Some(out) = out {
                write_out(&out, &fileio::write_classes(&mf.sfsm.name, &classes))?;
            }
            Ok(true)
        }
        Command::Abstract { model, out } => {
            let mf = load_model(&model)?;
            let classes = input_classes(&mf.sfsm);
            let a = abstract_machine(&mf.sfsm, &classes).map_err(|e| e.to_string())?;
            println!(
                "{}: {} abstract states, {} after minimization",
                mf.sfsm.name,
                a.machine.states.len(),
                a.minimized.states.len()
            );
            for s in &a.minimized.states {
                println!("  {s}");
            }
            if let Some(out) = out {
                write_out(&out, &fileio::write_fsm(&a.minimized))?;
            }
            Ok(true)
        }
        Command::Gensuite { model, method, bound, out } => {
            let mf = load_model(&model)?;
            let classes = input_classes(&mf.sfsm);
            let a = abstract_machine(&mf.sfsm, &classes).map_err(|e| e.to_string())?;
            let n = a.minimized.states.len();
            let m = bound.unwrap_or(n);
            let (name, suite) = match method {
                Method::H => ("h", h_method(&a.minimized, m).map_err(|e| e.to_string())?),
                Method::W => ("w", w_method(&a.minimized, m).map_err(|e| e.to_string())?),
            };
            let concrete = concretize(&suite, &classes).map_err(|e| e.to_string())?;
            let maxlen = suite.iter().map(|c| c.steps.len()).max().unwrap_or(0);
            println!(
                "{}: {}-method suite, bound {m}: {} cases, max length {maxlen}",
                mf.sfsm.name,
                name,
                suite.len()
            );
            if let Some(out) = out {
                write_out(&out, &fileio::write_suite(&mf.sfsm.name, name, m, &suite, &concrete))?;
            }
            Ok(true)
        }
        Command::ModuleTest { model, suite, out } => {
            let mf = load_model(&model)?;
            let sf = parse_with(&suite, fileio::parse_suite)?;
            let mut sut = SfsmSut::new(&mf.sfsm);
            let verdicts = run_suite(&sf.concrete_cases, &mut sut);
            let mut failures = Vec::new();
            for v in &verdicts {
                match &v.outcome {
                    Outcome::Pass => {}
                    Outcome::Fail { step, expected, observed } => failures.push(format!(
                        "case {} step {step}: expected {expected}, observed {observed}",
                        v.case_id
                    )),
                    Outcome::Error { step, message } => {
                        failures.push(format!("case {} step {step}: error: {message}", v.case_id))
                    }
                }
            }
            let mut text = format!(
                "module test: {} cases, {} failed\n",
                verdicts.len(),
                failures.len()
            );
            for f in &failures {
                text.push_str(f);
                text.push('\n');
            }
            print!("{text}");
            if let Some(stem) = out {
                let json = serde_json::json!({
                    "command": "module-test",
                    "model": mf.sfsm.name,
                    "method": sf.method,
                    "cases": verdicts.len(),
                    "failed": failures.len(),
                    "failures": failures,
                });
                write_report_pair(&stem, &text, json)?;
            }
            Ok(failures.is_empty())
        }
        Command::Mutate { model, suite, count, seed, out } => {
            let mf = load_model(&model)?;
            let sf = parse_with(&suite, fileio::parse_suite)?;
            let seed = env_seed(seed, 20_240_817);
            let classes = input_classes(&mf.sfsm);
            let a = abstract_machine(&mf.sfsm, &classes).map_err(|e| e.to_string())?;
            let m = sf.bound.max(a.minimized.states.len());
            let mutants =
                generate_mutants(&a.minimized, Some((&mf.sfsm, &classes)), m, count, seed)
                    .map_err(|e| e.to_string())?;
            let report = kill_report(&a.minimized, &sf.abstract_cases, &mutants)
                .map_err(|e| e.to_string())?;
            let survivors = report.survivors();
            let false_alarms = report.false_alarms();
            let text = format!(
                "mutation score: {} mutants ({} equivalent), {} killed, kill rate {:.1}%\n\
                 survivors: {:?}\nfalse alarms: {:?}\n",
                report.total(),
                report.equivalent_count(),
                report.killed_count(),
                100.0 * report.kill_rate(),
                survivors,
                false_alarms,
            );
            print!("{text}");
            if let Some(stem) = out {
                let json = serde_json::json!({
                    "command": "mutate",
                    "model": mf.sfsm.name,
                    "seed": seed,
                    "bound": m,
                    "mutants": report.total(),
                    "equivalent": report.equivalent_count(),
                    "killed": report.killed_count(),
                    "kill_rate": report.kill_rate(),
                    "survivors": survivors,
                    "false_alarms": false_alarms,
                });
                write_report_pair(&stem, &text, json)?;
            }
            Ok(survivors.is_empty() && false_alarms.is_empty())
        }
        Command::SystemTest { executors, wall_clock, seed, coverage_target, out } => {
            if executors == 0 || wall_clock > executors {
                return Err("need 1 <= wall_clock <= executors".into());
            }
            let cfg = CampaignConfig {
                executors,
                wall_clock,
                seed: env_seed(seed, 0),
                coverage_target,
                ..CampaignConfig::default()
            };
            let report = run_campaign(&cfg);
            let text = render_report(&report);
            print!("{text}");
            if let Some(stem) = out {
                let runs: Vec<serde_json::Value> = report
                    .runs
                    .iter()
                    .map(|r| {
                        serde_json::json!({
                            "run": r.run_id,
                            "leaf": r.leaf,
                            "mode": r.mode.to_string(),
                            "verdict": format!("{:?}", r.verdict),
                            "cycles": r.cycles,
                            "new_normal": r.new_normal,
                        })
                    })
                    .collect();
                let json = serde_json::json!({
                    "command": "system-test",
                    "seed": cfg.seed,
                    "executors": executors,
                    "wall_clock": wall_clock,
                    "coverage_target": coverage_target,
                    "coverage": report.ledger.percentage(),
                    "covered_normal": report.ledger.covered_normal(),
                    "normal_total": report.ledger.normal.len(),
                    "uncovered": report.ledger.uncovered_normal(),
                    "requirements": report.requirements.iter()
                        .map(|(id, st)| serde_json::json!({"id": id, "status": st.to_string()}))
                        .collect::<Vec<_>>(),
                    "simulated_seconds": report.simulated_seconds,
                    "runs": runs,
                    "succeeded": report.succeeded(),
                });
                write_report_pair(&stem, &text, json)?;
            }
            Ok(report.succeeded())
        }
        Command::Report { report } => {
            let body = read(&report)?;
            let json: serde_json::Value =
                serde_json::from_str(&body).map_err(|e| format!("{}: {e}", report.display()))?;
            let text = json
                .get("text")
                .and_then(|t| t.as_str())
                .ok_or_else(|| format!("{}: no `text` field", report.display()))?;
            print!("{text}");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
