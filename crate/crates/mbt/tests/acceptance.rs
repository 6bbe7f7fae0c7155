//! Acceptance suite: one pass/fail line per criterion (run with
//! `cargo test --test acceptance -- --nocapture` to see them). The criteria
//! pin the published figures for the train controller demo: recovered input
//! classes, abstraction size, suite shape, empirical completeness against
//! seeded mutants, physics identities, the end-to-end halt oracle, campaign
//! coverage and determinism.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mbt::abstraction::abstract_machine;
use mbt::agents::{render_report, run_campaign, CampaignConfig};
use mbt::eqclass::{input_classes, InputClass};
use mbt::fsm::MealyFsm;
use mbt::mutation::{generate_mutants, kill_report};
use mbt::predicate::{equivalent, parse_pred};
use mbt::sstt::ReqStatus;
use mbt::testgen::{concretize, h_method, run_suite, w_method, Outcome, SfsmSut};
use mbt::train::{self, x_stop_expanded, Constants, TrainSim};

fn verdict(criterion: usize, name: &str, ok: bool) {
    println!("criterion {criterion} ({name}): {}", if ok { "pass" } else { "FAIL" });
    assert!(ok, "criterion {criterion} ({name}) failed");
}

fn train_setup() -> (mbt::sfsm::Sfsm, Vec<InputClass>, MealyFsm) {
    let m = train::controller_model();
    let classes = input_classes(&m);
    let a = abstract_machine(&m, &classes).expect("abstraction");
    (m, classes, a.minimized)
}

/// The five class predicates published with the example, frozen verbatim.
const PUBLISHED: [&str; 5] = [
    "(not pwr)",
    "(and pwr omega (> v 0))",
    "(and pwr (not omega) (> (- xB x) 0.6) (> (- xB xStop) 200) (>= c 0.9) (> v 0) (< v 1))",
    "(and pwr (not omega) (> (- xB x) 0.6) (> (- xB xStop) 200) (>= c 0.9) (> v 22))",
    "(and pwr (not omega) (<= (- xB x) 0.6) (<= (- xB xStop) 0) (= v 0))",
];

#[test]
fn criterion_1_published_class_recovery() {
    let t0 = Instant::now();
    let m = train::controller_model();
    let classes = input_classes(&m);
    let elapsed = t0.elapsed().as_secs_f64();
    let all_recovered = PUBLISHED.iter().all(|text| {
        let p = parse_pred(text).unwrap();
        classes.iter().any(|c| equivalent(&c.predicate, &p, &m.inputs))
    });
    let count_ok = (20..=36).contains(&classes.len());
    verdict(1, "published-class recovery", all_recovered && count_ok && elapsed < 5.0);
}

#[test]
fn criterion_2_abstraction_size() {
    let m = train::controller_model();
    let classes = input_classes(&m);
    let t0 = Instant::now();
    let a = abstract_machine(&m, &classes).expect("abstraction");
    let elapsed = t0.elapsed().as_secs_f64();
    let n = a.minimized.states.len();
    verdict(2, "abstraction size", (5..=8).contains(&n) && elapsed < 1.0);
}

#[test]
fn criterion_3_suite_shape() {
    let (_, _, fsm) = train_setup();
    let t0 = Instant::now();
    let suite = h_method(&fsm, fsm.states.len()).expect("h-method");
    let elapsed = t0.elapsed().as_secs_f64();
    let maxlen = suite.iter().map(|c| c.steps.len()).max().unwrap_or(0);
    verdict(
        3,
        "h-suite shape",
        (300..=1200).contains(&suite.len()) && maxlen <= 5 && elapsed < 10.0,
    );
}

#[test]
fn criterion_4_empirical_completeness() {
    let t0 = Instant::now();
    let (m, classes, fsm) = train_setup();
    // Bound n+1 for mutants and suites alike, so state-splitting mutants
    // stay inside the completeness hypothesis.
    let bound = fsm.states.len() + 1;
    let h = h_method(&fsm, bound).expect("h-method");
    let w = w_method(&fsm, bound).expect("w-method");
    let mutants = generate_mutants(&fsm, Some((&m, &classes)), bound, 500, 20_240_817)
        .expect("mutants");
    let rh = kill_report(&fsm, &h, &mutants).expect("h kill report");
    let rw = kill_report(&fsm, &w, &mutants).expect("w kill report");
    let elapsed = t0.elapsed().as_secs_f64();
    let ok = [&rh, &rw].iter().all(|r| {
        r.total() == 500 && r.kill_rate() == 1.0 && r.survivors().is_empty() && r.false_alarms().is_empty()
    });
    verdict(4, "mutation completeness", ok && elapsed < 120.0);
}

#[test]
fn criterion_5_reference_soundness() {
    let (m, classes, fsm) = train_setup();
    let n = fsm.states.len();
    let mut failures = 0usize;
    for suite in [h_method(&fsm, n).unwrap(), w_method(&fsm, n).unwrap()] {
        let concrete = concretize(&suite, &classes).expect("concretize");
        let mut sut = SfsmSut::new(&m);
        failures += run_suite(&concrete, &mut sut)
            .iter()
            .filter(|v| !matches!(v.outcome, Outcome::Pass))
            .count();
    }
    verdict(5, "reference passes h+w suites", failures == 0);
}

#[test]
fn criterion_6_physics_identities() {
    let k = Constants::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    let mut ok = true;
    for _ in 0..10_000 {
        let x: f64 = rng.gen_range(0.0..1_000_000.0);
        let v: f64 = rng.gen_range(0.0..100.0);
        let a: f64 = rng.gen_range(-1.0..1.0);
        // Speed recovery from the position increment of one cycle.
        let dx = v * k.dt + a / 2.0 * k.dt * k.dt;
        ok &= rel(2.0 * dx / k.dt - v, v + a * k.dt);
        // Stopping prediction: explicit braking-phase form vs collapsed form.
        let d_stop = -(v + a * k.dt) / k.a_minus;
        let explicit = x
            + v * k.dt
            + a / 2.0 * k.dt * k.dt
            + (v + a * k.dt) * d_stop
            + k.a_minus / 2.0 * d_stop * d_stop;
        ok &= rel(explicit, x_stop_expanded(x, v, a, &k));
    }
    // Hand substitution at v' = 22: 22 s to stop, 242 m beyond this cycle.
    let d_stop = -(22.0 + 0.0 * k.dt) / k.a_minus;
    ok &= d_stop == 22.0;
    let advance = 22.0 * k.dt;
    ok &= (x_stop_expanded(100.0, 22.0, 0.0, &k) - (100.0 + advance) - 242.0).abs() < 1e-9;
    verdict(6, "physics identities", ok);
}

#[test]
fn criterion_7_e2e_halt_oracle() {
    let t0 = Instant::now();
    let trace = TrainSim::run_scenario(&train::standard_run(), Constants::default())
        .expect("standard run");
    let elapsed = t0.elapsed().as_secs_f64();
    let k = Constants::default();
    let halt = trace.iter().rev().find(|r| r.pwr).expect("powered cycles");
    let halted = halt.v == 0.0 && (halt.x_b - halt.x).abs() <= k.alpha;
    let speed_ok = trace.iter().all(|r| r.v <= k.v_max + 0.2);
    let brake_ok = trace.iter().all(|r| !(r.omega && r.v > 0.0) || r.a == k.a_minus);
    verdict(7, "e2e halt oracle", halted && speed_ok && brake_ok && elapsed < 30.0);
}

#[test]
fn criterion_8_campaign_coverage() {
    let t0 = Instant::now();
    let cfg = CampaignConfig { executors: 5, wall_clock: 1, ..CampaignConfig::default() };
    let report = run_campaign(&cfg);
    let elapsed = t0.elapsed().as_secs_f64();
    let covered = report.ledger.percentage() == 100.0 && report.stall.is_empty();
    let obstacle_ok = report
        .requirements
        .iter()
        .any(|(id, st)| id == "obstacle-braking" && *st == ReqStatus::NonVacuous);
    let delegated = report.runs.iter().any(|r| r.mode.to_string() == "wall-clock");
    verdict(8, "campaign coverage", covered && obstacle_ok && delegated && elapsed < 300.0);
}

#[test]
fn criterion_9_determinism() {
    let (m, classes, fsm) = train_setup();
    // Same seed, same artifacts, byte for byte.
    let classes2 = input_classes(&m);
    let mut ok = mbt::fileio::write_classes(&m.name, &classes)
        == mbt::fileio::write_classes(&m.name, &classes2);
    ok &= mbt::fileio::write_fsm(&fsm) == {
        let a = abstract_machine(&m, &classes2).unwrap();
        mbt::fileio::write_fsm(&a.minimized)
    };
    let n = fsm.states.len();
    let h1 = h_method(&fsm, n).unwrap();
    let h2 = h_method(&fsm, n).unwrap();
    let c1 = concretize(&h1, &classes).unwrap();
    let c2 = concretize(&h2, &classes2).unwrap();
    ok &= mbt::fileio::write_suite(&m.name, "h", n, &h1, &c1)
        == mbt::fileio::write_suite(&m.name, "h", n, &h2, &c2);
    let mu1 = generate_mutants(&fsm, Some((&m, &classes)), n + 1, 60, 11).unwrap();
    let mu2 = generate_mutants(&fsm, Some((&m, &classes)), n + 1, 60, 11).unwrap();
    ok &= mu1 == mu2;
    // Campaign reports repeat byte-identically under a fixed seed.
    let cfg = CampaignConfig { executors: 2, seed: 3, ..CampaignConfig::default() };
    ok &= render_report(&run_campaign(&cfg)) == render_report(&run_campaign(&cfg));
    // Final coverage ledger does not depend on the executor count.
    let one = run_campaign(&CampaignConfig { executors: 1, ..CampaignConfig::default() });
    let five = run_campaign(&CampaignConfig { executors: 5, ..CampaignConfig::default() });
    ok &= one.ledger == five.ledger;
    verdict(9, "determinism", ok);
}
