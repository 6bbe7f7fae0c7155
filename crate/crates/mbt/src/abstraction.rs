//! Abstraction of a symbolic state machine to a finite Mealy machine whose
//! input alphabet is the set of input equivalence classes. Because every
//! valuation in a class fires the same transition at every control state, the
//! Mealy machine simulates the symbolic machine exactly.

use thiserror::Error;

use crate::eqclass::InputClass;
use crate::fsm::MealyFsm;
use crate::sfsm::Sfsm;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AbstractError {
    #[error("class `{class}` enables {enabled} transitions at state `{state}` (model invalid)")]
    NotUnique { state: String, class: String, enabled: usize },
    #[error("class `{class}` guard evaluation failed at `{state}`")]
    Eval { state: String, class: String },
}

/// Result of abstracting a symbolic machine over its input classes.
#[derive(Debug, Clone)]
pub struct Abstraction {
    /// Unminimized machine; state i is the symbolic machine's state i. Kept
    /// because transition coverage is accounted on symbolic transitions.
    pub machine: MealyFsm,
    /// Observationally minimal machine with canonical state order.
    pub minimized: MealyFsm,
    /// transition_of[state][class] = index of the symbolic transition that
    /// the class fires at that state.
    pub transition_of: Vec<Vec<usize>>,
}

/// Build the Mealy abstraction: for each (state, class) the unique enabled
/// symbolic transition defines the successor and the output label (the
/// transition's output assignments, rendered `target:=value`).
pub fn abstract_machine(m: &Sfsm, classes: &[InputClass]) -> Result<Abstraction, AbstractError> {
    let mut outputs: Vec<String> = Vec::new();
    let mut delta = vec![vec![0usize; classes.len()]; m.states.len()];
    let mut lambda = vec![vec![0usize; classes.len()]; m.states.len()];
    let mut transition_of = vec![vec![0usize; classes.len()]; m.states.len()];
    for (si, state) in m.states.iter().enumerate() {
        for (ci, class) in classes.iter().enumerate() {
            let mut enabled = Vec::new();
            for (ti, t) in m.outgoing(state) {
                match t.guard.evaluate(&class.representative) {
                    Ok(true) => enabled.push((ti, t)),
                    Ok(false) => {}
                    Err(_) => {
                        return Err(AbstractError::Eval {
                            state: state.clone(),
                            class: class.id.clone(),
                        })
                    }
                }
            }
            let [(ti, t)] = enabled[..] else {
                return Err(AbstractError::NotUnique {
                    state: state.clone(),
                    class: class.id.clone(),
                    enabled: enabled.len(),
                });
            };
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
            delta[si][ci] = m.states.iter().position(|s| *s == t.dest).expect("validated dest");
            lambda[si][ci] = oi;
            transition_of[si][ci] = ti;
        }
    }
    let initial = m
        .states
        .iter()
        .position(|s| *s == m.initial)
        .expect("validated initial state");
    let machine = MealyFsm::new(
        &m.name,
        classes.iter().map(|c| c.id.clone()).collect(),
        outputs,
        m.states.clone(),
        initial,
        delta,
        lambda,
    )
    .expect("abstraction tables are total by construction");
    let minimized = machine.minimize();
    Ok(Abstraction { machine, minimized, transition_of })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eqclass::{classify, input_classes};
    use crate::fsm::equivalent;
    use crate::predicate::{parse_pred, Decls, VarDecl};
    use crate::sfsm::{OutputAssignment, Tag, Transition};
    use crate::train;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn train_abstraction() -> (Sfsm, Vec<crate::eqclass::InputClass>, Abstraction) {
        let m = train::controller_model();
        let classes = input_classes(&m);
        let a = abstract_machine(&m, &classes).unwrap();
        (m, classes, a)
    }

    #[test]
    fn train_abstraction_shape() {
        let (m, classes, a) = train_abstraction();
        assert_eq!(a.machine.inputs.len(), classes.len());
        assert_eq!(a.machine.states.len(), m.states.len());
        assert_eq!(a.machine.outputs.len(), 3);
        let mut sorted = a.machine.outputs.clone();
        sorted.sort();
        assert_eq!(sorted, vec!["a:=aminus", "a:=aplus", "a:=zero"]);
    }

    #[test]
    fn train_minimized_state_count_in_band() {
        let (_, _, a) = train_abstraction();
        let n = a.minimized.states.len();
        assert!((5..=8).contains(&n), "minimized to {n} states");
        assert_eq!(n, 6);
    }

    #[test]
    fn minimized_machine_is_equivalent_to_raw() {
        let (_, _, a) = train_abstraction();
        assert_eq!(equivalent(&a.machine, &a.minimized), Ok(None));
    }

    #[test]
    fn one_state_one_guard_model_abstracts_to_unit_machine() {
        let t = |g: &str| Transition {
            source: "S".into(),
            guard: parse_pred(g).unwrap(),
            outputs: vec![OutputAssignment::new("a", "zero")],
            dest: "S".into(),
            tag: Tag::Normal,
        };
        let m = Sfsm {
            name: "unit".into(),
            inputs: Decls::new(vec![VarDecl::boolean("p")]),
            outputs: Decls::new(vec![VarDecl::enumerated("a", &["zero"])]),
            states: vec!["S".into()],
            initial: "S".into(),
            end_states: BTreeSet::new(),
            transitions: vec![t("p"), t("(not p)")],
        };
        let classes = input_classes(&m);
        let a = abstract_machine(&m, &classes).unwrap();
        assert_eq!(a.machine.states.len(), 1);
        assert_eq!(a.minimized.states.len(), 1);
        assert_eq!(a.machine.outputs, vec!["a:=zero"]);
    }

    #[test]
    fn random_valuation_step_agrees_with_table() {
        let (m, classes, a) = train_abstraction();
        let mut rng = ChaCha8Rng::seed_from_u64(314);
        for _ in 0..500 {
            let u = train::tests_support::random_valuation(&mut rng, &m.inputs);
            let c = classify(&classes, &u).expect("classes partition the space");
            let ci = a.machine.input_index(&c.id).unwrap();
            for (si, state) in m.states.iter().enumerate() {
                let (ti, dest, outs) = m.step_indexed(state, &u).unwrap();
                assert_eq!(ti, a.transition_of[si][ci]);
                assert_eq!(dest, m.states[a.machine.delta[si][ci]]);
                let label = outs.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(",");
                assert_eq!(label, a.machine.outputs[a.machine.lambda[si][ci]]);
            }
        }
    }

    #[test]
    fn representative_sequences_simulate_the_symbolic_machine() {
        let (m, classes, a) = train_abstraction();
        let mut rng = ChaCha8Rng::seed_from_u64(2_718);
        for _ in 0..1_000 {
            let len = rng.gen_range(1..=10);
            let word: Vec<usize> = (0..len).map(|_| rng.gen_range(0..classes.len())).collect();
            let mut sym_state = m.initial.clone();
            let mut sym_out = Vec::new();
            for &ci in &word {
                let (dest, outs) = m.step(&sym_state, &classes[ci].representative).unwrap();
                sym_out.push(outs.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(","));
                sym_state = dest;
            }
            let (_, raw_out) = a.machine.run(a.machine.initial, &word);
            let raw_out: Vec<String> =
                raw_out.iter().map(|&o| a.machine.outputs[o].clone()).collect();
            assert_eq!(sym_out, raw_out);
            // the minimized machine agrees as well (same alphabet order)
            let (_, min_out) = a.minimized.run(a.minimized.initial, &word);
            let min_out: Vec<String> =
                min_out.iter().map(|&o| a.minimized.outputs[o].clone()).collect();
            assert_eq!(sym_out, min_out);
        }
    }

    #[test]
    fn minimized_blocks_match_the_intended_control_grouping() {
        let (_, _, a) = train_abstraction();
        let blocks: BTreeSet<String> = a.minimized.states.iter().cloned().collect();
        let expect: BTreeSet<String> = [
            "POWER_OFF+WAIT_FOR_MA",
            "DRIVING+SAFE_DRIVING",
            "NO_ACCEL",
            "BRAKE_TO_TARGET",
            "STOP_TRAIN+BRAKE_FOR_OBSTACLE",
            "HALTED",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        assert_eq!(blocks, expect);
    }
}
