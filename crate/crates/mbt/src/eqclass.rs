//! Input equivalence classes: satisfiable conjunctions over the model's
//! guard atoms, refined until every control state has exactly one enabled
//! transition. All members of a class trigger identical model behaviour.

use std::collections::BTreeSet;

use crate::predicate::{find_model, is_satisfiable, Atom, Decls, Pred, Valuation};
use crate::sfsm::Sfsm;

#[derive(Debug, Clone, PartialEq)]
pub struct InputClass {
    /// c1, c2, ... in canonical (depth-first, negative-literal-first) order.
    pub id: String,
    /// Conjunction of guard literals.
    pub predicate: Pred,
    /// Deterministic witness valuation, complete over the input declarations.
    pub representative: Valuation,
}

/// Atoms in order of first appearance across the transition list; this is the
/// canonical split order of the class construction.
fn atom_order(m: &Sfsm) -> Vec<Atom> {
    let mut seen = BTreeSet::new();
    let mut order = Vec::new();
    for t in &m.transitions {
        collect_atoms(&t.guard, &mut seen, &mut order);
    }
    order
}

fn collect_atoms(p: &Pred, seen: &mut BTreeSet<Atom>, order: &mut Vec<Atom>) {
    match p {
        Pred::True | Pred::False => {}
        Pred::Lit { atom, .. } => {
            if seen.insert(atom.clone()) {
                order.push(atom.clone());
            }
        }
        Pred::And(ps) | Pred::Or(ps) => {
            for q in ps {
                collect_atoms(q, seen, order);
            }
        }
    }
}

fn atoms_of(p: &Pred) -> BTreeSet<Atom> {
    let mut seen = BTreeSet::new();
    let mut order = Vec::new();
    collect_atoms(p, &mut seen, &mut order);
    seen
}

struct Builder<'a> {
    m: &'a Sfsm,
    order: Vec<Atom>,
    /// Atom set of each transition guard, for split-atom selection.
    guard_atoms: Vec<BTreeSet<Atom>>,
    classes: Vec<InputClass>,
}

impl<'a> Builder<'a> {
    fn decls(&self) -> &Decls {
        &self.m.inputs
    }

    /// Depth-first refinement. `literals` is the current path, `candidates`
    /// the per-state transitions still compatible with it.
    fn refine(&mut self, literals: &mut Vec<(Atom, bool)>, candidates: &[Vec<usize>]) {
        if candidates.iter().all(|c| c.len() == 1) {
            let predicate = self.path_pred(literals);
            let representative =
                find_model(&predicate, self.decls()).expect("class path is satisfiable");
            let id = format!("c{}", self.classes.len() + 1);
            self.classes.push(InputClass { id, predicate, representative });
            return;
        }
        let assigned: BTreeSet<&Atom> = literals.iter().map(|(a, _)| a).collect();
        let split = self
            .order
            .iter()
            .find(|atom| {
                !assigned.contains(*atom)
                    && candidates.iter().any(|c| {
                        c.len() > 1 && c.iter().any(|&i| self.guard_atoms[i].contains(*atom))
                    })
            })
            .cloned()
            .expect("unresolved state implies an unassigned guard atom");
        for value in [false, true] {
            literals.push((split.clone(), value));
            let path = self.path_pred(literals);
            if is_satisfiable(&path, self.decls()) {
                let narrowed: Vec<Vec<usize>> = candidates
                    .iter()
                    .map(|c| {
                        c.iter()
                            .copied()
                            .filter(|&i| {
                                let g = &self.m.transitions[i].guard;
                                is_satisfiable(&Pred::and(vec![path.clone(), g.clone()]), self.decls())
                            })
                            .collect()
                    })
                    .collect();
                self.refine(literals, &narrowed);
            }
            literals.pop();
        }
    }

    fn path_pred(&self, literals: &[(Atom, bool)]) -> Pred {
        Pred::and(
            literals
                .iter()
                .map(|(a, pos)| Pred::lit(a.clone(), *pos))
                .collect(),
        )
    }
}

/// Enumerate the input equivalence classes of a valid model.
pub fn input_classes(m: &Sfsm) -> Vec<InputClass> {
    let order = atom_order(m);
    let guard_atoms: Vec<BTreeSet<Atom>> = m.transitions.iter().map(|t| atoms_of(&t.guard)).collect();
    let mut b = Builder { m, order, guard_atoms, classes: Vec::new() };
    let initial: Vec<Vec<usize>> = m
        .states
        .iter()
        .map(|s| b.m.outgoing(s).map(|(i, _)| i).collect())
        .collect();
    let mut literals = Vec::new();
    b.refine(&mut literals, &initial);
    b.classes
}

/// The unique class whose predicate the valuation satisfies.
pub fn classify<'c>(classes: &'c [InputClass], u: &Valuation) -> Option<&'c InputClass> {
    classes.iter().find(|c| c.predicate.evaluate(u) == Ok(true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::{equivalent, parse_pred, rat, rat_int, Value, VarDecl};
    use crate::sfsm::{OutputAssignment, Tag, Transition};
    use crate::train;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn train_classes() -> Vec<InputClass> {
        input_classes(&train::controller_model())
    }

    const PUBLISHED: [&str; 5] = [
        "(not pwr)",
        "(and pwr omega (> v 0))",
        "(and pwr (not omega) (> (- xB x) 0.6) (> (- xB xStop) 200) (>= c 0.9) (> v 0) (< v 1))",
        "(and pwr (not omega) (> (- xB x) 0.6) (> (- xB xStop) 200) (>= c 0.9) (> v 22))",
        "(and pwr (not omega) (<= (- xB x) 0.6) (<= (- xB xStop) 0) (= v 0))",
    ];

    #[test]
    fn train_class_count_in_band() {
        let classes = train_classes();
        assert!(
            (20..=36).contains(&classes.len()),
            "class count {} outside band",
            classes.len()
        );
        assert_eq!(classes.len(), 26);
    }

    #[test]
    fn published_classes_recovered() {
        let m = train::controller_model();
        let classes = train_classes();
        for text in PUBLISHED {
            let p = parse_pred(text).unwrap();
            assert!(
                classes.iter().any(|c| equivalent(&c.predicate, &p, &m.inputs)),
                "no class equivalent to {text}"
            );
        }
    }

    #[test]
    fn first_class_is_power_off() {
        let m = train::controller_model();
        let classes = train_classes();
        let p = parse_pred("(not pwr)").unwrap();
        assert!(equivalent(&classes[0].predicate, &p, &m.inputs));
        assert_eq!(classes[0].id, "c1");
    }

    #[test]
    fn single_guard_machine_yields_two_classes() {
        let decls = Decls::new(vec![VarDecl::boolean("p")]);
        let t = |g: &str| Transition {
            source: "S".into(),
            guard: parse_pred(g).unwrap(),
            outputs: vec![OutputAssignment::new("a", "zero")],
            dest: "S".into(),
            tag: Tag::Normal,
        };
        let m = Sfsm {
            name: "one-guard".into(),
            inputs: decls,
            outputs: Decls::new(vec![VarDecl::enumerated("a", &["zero"])]),
            states: vec!["S".into()],
            initial: "S".into(),
            end_states: BTreeSet::new(),
            transitions: vec![t("p"), t("(not p)")],
        };
        let classes = input_classes(&m);
        assert_eq!(classes.len(), 2);
    }

    #[test]
    fn representatives_classify_to_their_own_class() {
        let classes = train_classes();
        for c in &classes {
            let found = classify(&classes, &c.representative).expect("representative classifies");
            assert_eq!(found.id, c.id);
        }
    }

    #[test]
    fn concrete_step_two_valuation_hits_the_slow_start_class() {
        let m = train::controller_model();
        let classes = train_classes();
        let mut u = Valuation::new();
        u.insert("pwr".into(), Value::Bool(true));
        u.insert("omega".into(), Value::Bool(false));
        u.insert("xB".into(), Value::Num(rat_int(10_000)));
        u.insert("x".into(), Value::Num(rat_int(0)));
        u.insert("xStop".into(), Value::Num(rat_int(0)));
        u.insert("c".into(), Value::Num(rat(95, 100)));
        u.insert("v".into(), Value::Num(rat(1, 100)));
        let hit = classify(&classes, &u).unwrap();
        let c5 = parse_pred(PUBLISHED[2]).unwrap();
        assert!(equivalent(&hit.predicate, &c5, &m.inputs));
    }

    #[test]
    fn arbitrary_values_with_power_off_hit_the_first_class() {
        let classes = train_classes();
        let mut u = Valuation::new();
        u.insert("pwr".into(), Value::Bool(false));
        u.insert("omega".into(), Value::Bool(true));
        u.insert("xB".into(), Value::Num(rat_int(777)));
        u.insert("x".into(), Value::Num(rat_int(31)));
        u.insert("xStop".into(), Value::Num(rat(123, 7)));
        u.insert("c".into(), Value::Num(rat(1, 3)));
        u.insert("v".into(), Value::Num(rat(55, 2)));
        assert_eq!(classify(&classes, &u).unwrap().id, "c1");
    }

    use train::tests_support::random_valuation;

    #[test]
    fn classes_partition_the_input_space() {
        let m = train::controller_model();
        let classes = train_classes();
        let mut rng = ChaCha8Rng::seed_from_u64(20_240_817);
        for _ in 0..10_000 {
            let u = random_valuation(&mut rng, &m.inputs);
            let hits: Vec<&InputClass> = classes
                .iter()
                .filter(|c| c.predicate.evaluate(&u) == Ok(true))
                .collect();
            assert_eq!(hits.len(), 1, "valuation {u:?} hit {} classes", hits.len());
        }
    }

    #[test]
    fn each_class_enables_one_transition_per_state() {
        let m = train::controller_model();
        let classes = train_classes();
        for c in &classes {
            for state in &m.states {
                let enabled: Vec<usize> = m
                    .outgoing(state)
                    .filter(|(_, t)| crate::predicate::implies(&c.predicate, &t.guard, &m.inputs))
                    .map(|(i, _)| i)
                    .collect();
                assert_eq!(
                    enabled.len(),
                    1,
                    "class {} enables {} transitions at {state}",
                    c.id,
                    enabled.len()
                );
            }
        }
    }

    #[test]
    fn enumeration_is_deterministic() {
        let a = train_classes();
        let b = train_classes();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.predicate, y.predicate);
            assert_eq!(x.representative, y.representative);
        }
    }
}
