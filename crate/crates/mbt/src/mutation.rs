//! Mutation oracle: seeded generation of bounded-state mutants of the
//! abstract reference machine (plus guard-literal flips applied at the
//! symbolic level and lowered through abstraction), an equivalence check per
//! mutant, and a kill report for a given test suite. A complete suite must
//! kill every non-equivalent mutant and pass every equivalent one.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eqclass::InputClass;
use crate::fsm::{equivalent, FsmError, MealyFsm};
use crate::predicate::Pred;
use crate::sfsm::Sfsm;
use crate::testgen::AbstractTestCase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Operator {
    OutputSwap,
    TransitionRetarget,
    StateSplit,
    GuardLiteralFlip,
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Operator::OutputSwap => "output-swap",
            Operator::TransitionRetarget => "transition-retarget",
            Operator::StateSplit => "state-split",
            Operator::GuardLiteralFlip => "guard-literal-flip",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutant {
    pub id: usize,
    pub operator: Operator,
    pub machine: MealyFsm,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MutationError {
    #[error("state bound {m} below machine size {n}")]
    BoundTooSmall { m: usize, n: usize },
    #[error("no viable mutant after {attempts} attempts (seed {seed})")]
    Exhausted { attempts: usize, seed: u64 },
}

/// Per-mutant verdict of the oracle run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KillEntry {
    pub mutant: usize,
    pub operator: Operator,
    /// Observationally equivalent to the reference (product-machine check).
    pub equivalent: bool,
    /// Some suite case fails on the mutant.
    pub killed: bool,
    /// Index of the first killing case, when killed.
    pub killing_case: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KillReport {
    pub entries: Vec<KillEntry>,
}

impl KillReport {
    pub fn total(&self) -> usize {
        self.entries.len()
    }

    pub fn equivalent_count(&self) -> usize {
        self.entries.iter().filter(|e| e.equivalent).count()
    }

    pub fn killed_count(&self) -> usize {
        self.entries.iter().filter(|e| e.killed).count()
    }

    /// Non-equivalent mutants the suite failed to kill. Must be empty for a
    /// complete suite.
    pub fn survivors(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| !e.equivalent && !e.killed)
            .map(|e| e.mutant)
            .collect()
    }

    /// Equivalent mutants the suite killed anyway; any entry here means the
    /// suite rejects a correct implementation.
    pub fn false_alarms(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.equivalent && e.killed)
            .map(|e| e.mutant)
            .collect()
    }

    pub fn kill_rate(&self) -> f64 {
        let non_equiv = self.total() - self.equivalent_count();
        if non_equiv == 0 {
            return 1.0;
        }
        let killed = self.entries.iter().filter(|e| !e.equivalent && e.killed).count();
        killed as f64 / non_equiv as f64
    }
}

/// Flip the polarity of the `k`-th literal (preorder) of a predicate.
fn flip_literal(p: &Pred, k: &mut usize) -> Pred {
    match p {
        Pred::True | Pred::False => p.clone(),
        Pred::Lit { atom, positive } => {
            if *k == 0 {
                *k = usize::MAX;
                Pred::lit(atom.clone(), !positive)
            } else {
                if *k != usize::MAX {
                    *k -= 1;
                }
                p.clone()
            }
        }
        Pred::And(ps) => Pred::and(ps.iter().map(|q| flip_literal(q, k)).collect()),
        Pred::Or(ps) => Pred::or(ps.iter().map(|q| flip_literal(q, k)).collect()),
    }
}

fn literal_count(p: &Pred) -> usize {
    match p {
        Pred::True | Pred::False => 0,
        Pred::Lit { .. } => 1,
        Pred::And(ps) | Pred::Or(ps) => ps.iter().map(literal_count).sum(),
    }
}

/// Lower a (possibly non-deterministic after mutation) symbolic machine to
/// the class alphabet with first-match semantics; None when some class has
/// no enabled transition at some state.
fn lower_first_match(
    m: &Sfsm,
    classes: &[InputClass],
    inputs: Vec<String>,
    base_outputs: &[String],
    name: &str,
) -> Option<MealyFsm> {
    let mut outputs: Vec<String> = base_outputs.to_vec();
    let mut delta = vec![vec![0usize; classes.len()]; m.states.len()];
    let mut lambda = vec![vec![0usize; classes.len()]; m.states.len()];
    for (si, state) in m.states.iter().enumerate() {
        for (ci, class) in classes.iter().enumerate() {
            let mut hit = None;
            for (_, t) in m.outgoing(state) {
                if t.guard.evaluate(&class.representative) == Ok(true) {
                    hit = Some(t);
                    break;
                }
            }
            let t = hit?;
            let label = t
                .outputs
                .iter()
                .map(|o| o.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let oi = outputs.iter().position(|o| *o == label).unwrap_or_else(|| {
                outputs.push(label);
                outputs.len() - 1
            });
            delta[si][ci] = m.states.iter().position(|s| *s == t.dest)?;
            lambda[si][ci] = oi;
        }
    }
    let initial = m.states.iter().position(|s| *s == m.initial)?;
    MealyFsm::new(name, inputs, outputs, m.states.clone(), initial, delta, lambda).ok()
}

/// Generate `count` seeded mutants of the reference machine, drawn uniformly
/// over the applicable operators, each with at most `m` states. Guard-literal
/// flips require the symbolic model and its classes; without them the
/// remaining three operators are used.
pub fn generate_mutants(
    f: &MealyFsm,
    model: Option<(&Sfsm, &[InputClass])>,
    m: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Mutant>, MutationError> {
    let n = f.states.len();
    if m < n {
        return Err(MutationError::BoundTooSmall { m, n });
    }
    let mut ops = vec![Operator::OutputSwap, Operator::TransitionRetarget];
    if m > n {
        ops.push(Operator::StateSplit);
    }
    if model.is_some() {
        ops.push(Operator::GuardLiteralFlip);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mutants = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while mutants.len() < count {
        attempts += 1;
        if attempts > count * 100 + 1000 {
            return Err(MutationError::Exhausted { attempts, seed });
        }
        let op = ops[rng.gen_range(0..ops.len())];
        let candidate = match op {
            Operator::OutputSwap => {
                if f.outputs.len() < 2 {
                    continue;
                }
                let mut g = f.clone();
                let s = rng.gen_range(0..n);
                let i = rng.gen_range(0..f.inputs.len());
                let shift = rng.gen_range(1..f.outputs.len());
                g.lambda[s][i] = (g.lambda[s][i] + shift) % f.outputs.len();
                Some(g)
            }
            Operator::TransitionRetarget => {
                if n < 2 {
                    continue;
                }
                let mut g = f.clone();
                let s = rng.gen_range(0..n);
                let i = rng.gen_range(0..f.inputs.len());
                let shift = rng.gen_range(1..n);
                g.delta[s][i] = (g.delta[s][i] + shift) % n;
                Some(g)
            }
            Operator::StateSplit => {
                // duplicate a state and redirect one of its incoming edges;
                // half the splits also perturb one output of the copy,
                // making them non-equivalent
                let mut g = f.clone();
                let src = rng.gen_range(0..n);
                let inp = rng.gen_range(0..f.inputs.len());
                let target = g.delta[src][inp];
                let copy = g.states.len();
                g.states.push(format!("{}'", g.states[target]));
                g.delta.push(g.delta[target].clone());
                g.lambda.push(g.lambda[target].clone());
                g.delta[src][inp] = copy;
                if f.outputs.len() >= 2 && rng.gen_bool(0.5) {
                    let i = rng.gen_range(0..f.inputs.len());
                    let shift = rng.gen_range(1..f.outputs.len());
                    g.lambda[copy][i] = (g.lambda[copy][i] + shift) % f.outputs.len();
                }
                Some(g)
            }
            Operator::GuardLiteralFlip => {
                let (sfsm, classes) = model.expect("operator drawn only when model present");
                let ti = rng.gen_range(0..sfsm.transitions.len());
                let lits = literal_count(&sfsm.transitions[ti].guard);
                if lits == 0 {
                    continue;
                }
                let mut k = rng.gen_range(0..lits);
                let mut mutated = sfsm.clone();
                mutated.transitions[ti].guard = flip_literal(&sfsm.transitions[ti].guard, &mut k);
                lower_first_match(&mutated, classes, f.inputs.clone(), &f.outputs, "guard-flip")
                    .map(|g| g.minimize())
                    .filter(|g| g.states.len() <= m)
            }
        };
        let Some(machine) = candidate else { continue };
        mutants.push(Mutant { id: mutants.len(), operator: op, machine });
    }
    Ok(mutants)
}

/// Replay an abstract case on a machine; true when some step's output
/// differs from the expectation.
fn case_kills(machine: &MealyFsm, case: &AbstractTestCase) -> bool {
    let mut s = machine.initial;
    for (input, expected) in &case.steps {
        let Some(i) = machine.input_index(input) else {
            return true; // missing input symbol can never conform
        };
        if &machine.outputs[machine.lambda[s][i]] != expected {
            return true;
        }
        s = machine.delta[s][i];
    }
    false
}

/// Evaluate the suite against every mutant: equivalence via the
/// product-machine check, kill via abstract replay. Entries in mutant order.
pub fn kill_report(
    reference: &MealyFsm,
    suite: &[AbstractTestCase],
    mutants: &[Mutant],
) -> Result<KillReport, FsmError> {
    let mut entries = Vec::with_capacity(mutants.len());
    for mu in mutants {
        let equiv = equivalent(reference, &mu.machine)?.is_none();
        let killing_case = suite.iter().position(|c| case_kills(&mu.machine, c));
        entries.push(KillEntry {
            mutant: mu.id,
            operator: mu.operator,
            equivalent: equiv,
            killed: killing_case.is_some(),
            killing_case,
        });
    }
    Ok(KillReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::abstract_machine;
    use crate::eqclass::input_classes;
    use crate::testgen::{h_method, w_method};
    use crate::train;

    struct Setup {
        m: Sfsm,
        classes: Vec<InputClass>,
        fsm: MealyFsm,
    }

    fn setup() -> Setup {
        let m = train::controller_model();
        let classes = input_classes(&m);
        let fsm = abstract_machine(&m, &classes).unwrap().minimized;
        Setup { m, classes, fsm }
    }

    #[test]
    fn generation_is_reproducible() {
        let s = setup();
        let a = generate_mutants(&s.fsm, Some((&s.m, &s.classes)), 7, 40, 9).unwrap();
        let b = generate_mutants(&s.fsm, Some((&s.m, &s.classes)), 7, 40, 9).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.operator, y.operator);
            assert_eq!(x.machine, y.machine);
        }
    }

    #[test]
    fn output_swap_differs_in_exactly_one_cell() {
        let s = setup();
        let mutants = generate_mutants(&s.fsm, None, 6, 60, 3).unwrap();
        for mu in mutants.iter().filter(|m| m.operator == Operator::OutputSwap) {
            let mut diffs = 0;
            for st in 0..s.fsm.states.len() {
                for i in 0..s.fsm.inputs.len() {
                    if s.fsm.lambda[st][i] != mu.machine.lambda[st][i] {
                        diffs += 1;
                    }
                }
            }
            assert_eq!(diffs, 1);
            assert_eq!(s.fsm.delta, mu.machine.delta);
        }
    }

    #[test]
    fn state_split_respects_the_bound() {
        let s = setup();
        let n = s.fsm.states.len();
        let mutants = generate_mutants(&s.fsm, None, n + 1, 60, 5).unwrap();
        let mut saw_split = false;
        for mu in &mutants {
            assert!(mu.machine.states.len() <= n + 1);
            if mu.operator == Operator::StateSplit {
                assert_eq!(mu.machine.states.len(), n + 1);
                saw_split = true;
            }
        }
        assert!(saw_split);
    }

    #[test]
    fn bound_below_state_count_rejected() {
        let s = setup();
        let n = s.fsm.states.len();
        assert_eq!(
            generate_mutants(&s.fsm, None, n - 1, 1, 0),
            Err(MutationError::BoundTooSmall { m: n - 1, n })
        );
    }

    #[test]
    fn pure_state_split_is_flagged_equivalent_and_survives() {
        let s = setup();
        // split without output perturbation, built by hand
        let mut g = s.fsm.clone();
        let target = g.delta[0][0];
        let copy = g.states.len();
        g.states.push(format!("{}'", g.states[target]));
        g.delta.push(g.delta[target].clone());
        g.lambda.push(g.lambda[target].clone());
        g.delta[0][0] = copy;
        let mu = Mutant { id: 0, operator: Operator::StateSplit, machine: g };
        let suite = h_method(&s.fsm, s.fsm.states.len()).unwrap();
        let report = kill_report(&s.fsm, &suite, &[mu]).unwrap();
        assert!(report.entries[0].equivalent);
        assert!(!report.entries[0].killed);
        assert!(report.false_alarms().is_empty());
    }

    #[test]
    fn five_hundred_mutants_all_non_equivalent_killed_no_false_alarms() {
        let s = setup();
        let n = s.fsm.states.len();
        let bound = n + 1;
        let mutants =
            generate_mutants(&s.fsm, Some((&s.m, &s.classes)), bound, 500, 20_240_817).unwrap();
        let h = h_method(&s.fsm, bound).unwrap();
        let w = w_method(&s.fsm, bound).unwrap();
        for suite in [&h, &w] {
            let report = kill_report(&s.fsm, suite, &mutants).unwrap();
            assert_eq!(report.total(), 500);
            assert!(report.survivors().is_empty(), "survivors: {:?}", report.survivors());
            assert!(report.false_alarms().is_empty(), "false alarms: {:?}", report.false_alarms());
            assert_eq!(report.kill_rate(), 1.0);
        }
        // both complete suites kill exactly the non-equivalent mutants,
        // hence identical kill sets
        let kh = kill_report(&s.fsm, &h, &mutants).unwrap();
        let kw = kill_report(&s.fsm, &w, &mutants).unwrap();
        let sets = |r: &KillReport| {
            r.entries.iter().map(|e| (e.mutant, e.killed)).collect::<Vec<_>>()
        };
        assert_eq!(sets(&kh), sets(&kw));
    }
}
