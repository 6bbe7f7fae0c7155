//! Agent-based online system-test campaign: a coordinator that owns the
//! scenario tree and the transition-coverage ledger, delegates path runs to
//! parallel executor agents (simulation-time plus optional wall-clock-paced
//! "target" executors), and grows the tree toward uncovered transitions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{mpsc, Arc};

use crate::sfsm::{Sfsm, Tag};
use crate::sstt::{
    drive_path, grow, requirement_coverage, seed_tree, train_requirements, DriveConfig, PathRun,
    ReqStatus, RunVerdict, Sstt, SsttError,
};
use crate::train::{controller_model, scenario_library, Constants};

/// Per-transition coverage record. Robustness transitions are exempt: they
/// never enter the percentage denominator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageLedger {
    /// transition index -> ids of the runs that fired it
    pub covered: BTreeMap<usize, BTreeSet<usize>>,
    pub normal: BTreeSet<usize>,
    pub exempt: BTreeSet<usize>,
}

impl CoverageLedger {
    pub fn new(model: &Sfsm) -> Self {
        let mut normal = BTreeSet::new();
        let mut exempt = BTreeSet::new();
        for (i, t) in model.transitions.iter().enumerate() {
            match t.tag {
                Tag::Normal => normal.insert(i),
                Tag::Robustness => exempt.insert(i),
            };
        }
        CoverageLedger { covered: BTreeMap::new(), normal, exempt }
    }

    pub fn record(&mut self, run_id: usize, fired: &BTreeSet<usize>) {
        for &t in fired {
            self.covered.entry(t).or_default().insert(run_id);
        }
    }

    pub fn covered_normal(&self) -> usize {
        self.normal.iter().filter(|t| self.covered.contains_key(t)).count()
    }

    pub fn percentage(&self) -> f64 {
        if self.normal.is_empty() {
            return 100.0;
        }
        100.0 * self.covered_normal() as f64 / self.normal.len() as f64
    }

    pub fn uncovered_normal(&self) -> BTreeSet<usize> {
        self.normal.iter().copied().filter(|t| !self.covered.contains_key(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutorMode {
    Sim,
    WallClock,
}

impl std::fmt::Display for ExecutorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExecutorMode::Sim => write!(f, "sim"),
            ExecutorMode::WallClock => write!(f, "wall-clock"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    /// Executor agents running in parallel per round.
    pub executors: usize,
    /// How many of them are wall-clock paced (the "target" resources).
    pub wall_clock: usize,
    pub seed: u64,
    /// Percentage of normal transitions to cover.
    pub coverage_target: f64,
    pub max_scenarios: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            executors: 1,
            wall_clock: 0,
            seed: 0,
            coverage_target: 100.0,
            max_scenarios: 64,
        }
    }
}

/// Coordinator/executor protocol. Executors report via a shared channel;
/// assignments and growth decisions stay with the coordinator.
#[derive(Debug, Clone)]
pub enum Message {
    AssignPath { run_id: usize, leaf: usize, mode: ExecutorMode },
    StepReport { run_id: usize, node: usize },
    CoverageDelta { run_id: usize, transitions: BTreeSet<usize> },
    RunVerdict { run_id: usize, mode: ExecutorMode, run: PathRun },
    RequestNewPath { executor: usize },
    GrowNotification { target: usize, attached: Option<usize> },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::AssignPath { .. } => "assign-path",
            Message::StepReport { .. } => "step-report",
            Message::CoverageDelta { .. } => "coverage-delta",
            Message::RunVerdict { .. } => "run-verdict",
            Message::RequestNewPath { .. } => "request-new-path",
            Message::GrowNotification { .. } => "grow-notification",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: usize,
    pub leaf: usize,
    pub mode: ExecutorMode,
    pub verdict: RunVerdict,
    pub cycles: usize,
    pub pacing_ok: bool,
    /// Normal transitions newly covered by this run.
    pub new_normal: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub runs: Vec<RunSummary>,
    pub ledger: CoverageLedger,
    /// Worst status per requirement over all runs.
    pub requirements: Vec<(String, ReqStatus)>,
    /// Normal transitions left uncovered when the campaign stalled.
    pub stall: Vec<usize>,
    pub grown: Vec<(usize, Option<usize>)>,
    pub simulated_seconds: f64,
    pub delegated_wall: usize,
    pub message_counts: BTreeMap<String, usize>,
}

impl CampaignReport {
    pub fn succeeded(&self) -> bool {
        self.stall.is_empty() && self.runs.iter().all(|r| r.verdict.passed())
    }
}

/// Missions at most this many cycles long may be paced in real time; longer
/// replays stay on simulation-time executors.
const WALL_BUDGET_CYCLES: usize = 1_200;

fn merge_requirement(acc: &mut Vec<(String, ReqStatus)>, id: &str, status: ReqStatus) {
    let rank = |s: &ReqStatus| match s {
        ReqStatus::Violated { .. } => 2,
        ReqStatus::NonVacuous => 1,
        ReqStatus::Vacuous => 0,
    };
    match acc.iter_mut().find(|(i, _)| i == id) {
        Some((_, s)) => {
            if rank(&status) > rank(s) {
                *s = status;
            }
        }
        None => acc.push((id.to_string(), status)),
    }
}

/// Run the campaign: seed the tree from the mission library, execute paths in
/// barrier-synchronized rounds of up to `executors` parallel runs, merge the
/// verdicts into the ledger in run-id order, then grow toward uncovered
/// normal transitions until the coverage target, the scenario cap, or a
/// stall. Deterministic given the configuration.
pub fn run_campaign(cfg: &CampaignConfig) -> CampaignReport {
    let k = Constants::default();
    let model = Arc::new(controller_model());
    let reqs = train_requirements();
    let mut tree = Sstt::new(&model);
    let mut ledger = CoverageLedger::new(&model);
    let mut report = CampaignReport {
        runs: Vec::new(),
        ledger: ledger.clone(),
        requirements: Vec::new(),
        stall: Vec::new(),
        grown: Vec::new(),
        simulated_seconds: 0.0,
        delegated_wall: 0,
        message_counts: BTreeMap::new(),
    };
    let count = |kind: &str, n: usize, counts: &mut BTreeMap<String, usize>| {
        *counts.entry(kind.to_string()).or_default() += n;
    };
    let target_met = |l: &CoverageLedger| l.percentage() >= cfg.coverage_target;
    if target_met(&ledger) {
        report.ledger = ledger;
        return report;
    }
    let seed_leaves = seed_tree(&mut tree, &scenario_library(), &k).expect("library missions lower");
    let mut queue: VecDeque<usize> = seed_leaves.into();
    let mut next_run_id = 0usize;
    let mut infeasible: BTreeSet<usize> = BTreeSet::new();
    loop {
        if target_met(&ledger) {
            break;
        }
        if queue.is_empty() {
            let candidates: BTreeSet<usize> = ledger
                .uncovered_normal()
                .difference(&infeasible)
                .copied()
                .collect();
            if candidates.is_empty() {
                report.stall = ledger.uncovered_normal().into_iter().collect();
                break;
            }
            match grow(&mut tree, &candidates, &model, &k) {
                Ok(g) => {
                    count("grow-notification", 1, &mut report.message_counts);
                    report.grown.push((g.target, g.attached));
                    match g.attached {
                        Some(leaf) => queue.push_back(leaf),
                        None => {
                            infeasible.insert(g.target);
                        }
                    }
                }
                Err(SsttError::NothingToGrow) => {
                    report.stall = ledger.uncovered_normal().into_iter().collect();
                    break;
                }
                Err(_) => break,
            }
            continue;
        }
        let room = cfg.max_scenarios.saturating_sub(next_run_id);
        if room == 0 {
            report.stall = ledger.uncovered_normal().into_iter().collect();
            break;
        }
        let batch: Vec<usize> = (0..cfg.executors.min(queue.len()).min(room))
            .filter_map(|_| queue.pop_front())
            .collect();
        // wall-clock executors take the shortest missions within the pacing
        // budget; everything else runs in simulation time
        let mut modes = vec![ExecutorMode::Sim; batch.len()];
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.sort_by_key(|&i| (tree.nodes[batch[i]].cost, i));
        let mut wall_left = cfg.wall_clock;
        for i in order {
            if wall_left == 0 {
                break;
            }
            if tree.nodes[batch[i]].cost <= WALL_BUDGET_CYCLES {
                modes[i] = ExecutorMode::WallClock;
                wall_left -= 1;
            }
        }
        let (tx, rx) = mpsc::channel();
        let shared = Arc::new(tree.clone());
        let mut handles = Vec::new();
        for (i, &leaf) in batch.iter().enumerate() {
            let run_id = next_run_id + i;
            count("request-new-path", 1, &mut report.message_counts);
            count("assign-path", 1, &mut report.message_counts);
            let _ = Message::AssignPath { run_id, leaf, mode: modes[i] };
            let tx = tx.clone();
            let tree = shared.clone();
            let model = model.clone();
            let kk = k.clone();
            let mode = modes[i];
            handles.push(std::thread::spawn(move || {
                let dcfg = DriveConfig {
                    pace: (mode == ExecutorMode::WallClock).then_some(kk.dt),
                    ..DriveConfig::default()
                };
                let run = drive_path(&tree, leaf, &model, &kk, &dcfg);
                for &node in &run.nodes_visited {
                    let _ = tx.send(Message::StepReport { run_id, node });
                }
                let _ = tx.send(Message::CoverageDelta { run_id, transitions: run.fired.clone() });
                let _ = tx.send(Message::RunVerdict { run_id, mode, run });
            }));
        }
        drop(tx);
        let mut finished: Vec<(usize, ExecutorMode, PathRun)> = Vec::new();
        for msg in rx {
            count(msg.kind(), 1, &mut report.message_counts);
            if let Message::RunVerdict { run_id, mode, run } = msg {
                finished.push((run_id, mode, run));
            }
        }
        for h in handles {
            h.join().expect("executor thread completes");
        }
        // barrier reached: merge in run-id order for determinism
        finished.sort_by_key(|(id, _, _)| *id);
        for (run_id, mode, run) in finished {
            let before = ledger.covered_normal();
            ledger.record(run_id, &run.fired);
            for (id, status) in requirement_coverage(&run.log, &reqs) {
                merge_requirement(&mut report.requirements, &id, status);
            }
            report.simulated_seconds += run.cycles as f64 * k.dt;
            if mode == ExecutorMode::WallClock {
                report.delegated_wall += 1;
            }
            report.runs.push(RunSummary {
                run_id,
                leaf: run.leaf,
                mode,
                verdict: run.verdict.clone(),
                cycles: run.cycles,
                pacing_ok: run.pacing_ok,
                new_normal: ledger.covered_normal() - before,
            });
        }
        next_run_id += batch.len();
    }
    // the final idle round: every executor's request is answered by the
    // campaign-end notification
    count("request-new-path", cfg.executors, &mut report.message_counts);
    report.ledger = ledger;
    report
}

fn verdict_line(v: &RunVerdict) -> String {
    match v {
        RunVerdict::Pass => "pass".into(),
        RunVerdict::InvariantViolation { node, cycle, atom } => {
            format!("invariant-violation node {node} cycle {cycle} atom {atom}")
        }
        RunVerdict::Diverged { node, cycle, expected, observed } => {
            format!("diverged node {node} cycle {cycle} expected {expected} observed {observed}")
        }
        RunVerdict::ConformanceMismatch { cycle, expected, observed } => {
            format!("conformance-mismatch cycle {cycle} expected {expected} observed {observed}")
        }
        RunVerdict::NoProgress { node, transition } => match transition {
            Some(t) => format!("no-progress node {node} waiting on transition {t}"),
            None => format!("no-progress node {node}"),
        },
        RunVerdict::Error { cycle, message } => format!("error cycle {cycle}: {message}"),
    }
}

/// Canonical campaign report: deterministic given configuration and seed
/// (wall-clock pacing measurements are deliberately excluded).
pub fn render_report(r: &CampaignReport) -> String {
    let mut out = String::new();
    out.push_str("campaign report\n");
    out.push_str("runs:\n");
    for run in &r.runs {
        out.push_str(&format!(
            "  run {:>2}  leaf {:>3}  mode {:<10}  cycles {:>5}  new-normal {:>2}  verdict {}\n",
            run.run_id,
            run.leaf,
            run.mode.to_string(),
            run.cycles,
            run.new_normal,
            verdict_line(&run.verdict)
        ));
    }
    out.push_str(&format!(
        "coverage: {}/{} normal transitions ({:.1}%), {} robustness transitions exempt\n",
        r.ledger.covered_normal(),
        r.ledger.normal.len(),
        r.ledger.percentage(),
        r.ledger.exempt.len()
    ));
    let uncovered = r.ledger.uncovered_normal();
    if uncovered.is_empty() {
        out.push_str("uncovered: none\n");
    } else {
        let list: Vec<String> = uncovered.iter().map(|t| t.to_string()).collect();
        out.push_str(&format!("uncovered: {}\n", list.join(" ")));
    }
    out.push_str("requirements:\n");
    for (id, status) in &r.requirements {
        out.push_str(&format!("  {id}: {status}\n"));
    }
    for (target, attached) in &r.grown {
        match attached {
            Some(leaf) => out.push_str(&format!("grown: transition {target} -> leaf {leaf}\n")),
            None => out.push_str(&format!("grown: transition {target} infeasible\n")),
        }
    }
    out.push_str(&format!(
        "delegated to wall-clock executor: {}/{} runs\n",
        r.delegated_wall,
        r.runs.len()
    ));
    out.push_str(&format!("simulated time: {:.1} s\n", r.simulated_seconds));
    let msgs: Vec<String> =
        r.message_counts.iter().map(|(k, v)| format!("{k} {v}")).collect();
    out.push_str(&format!("messages: {}\n", msgs.join(", ")));
    if r.stall.is_empty() {
        out.push_str("stall: none\n");
    } else {
        let list: Vec<String> = r.stall.iter().map(|t| t.to_string()).collect();
        out.push_str(&format!("stall: {}\n", list.join(" ")));
    }
    out
}
