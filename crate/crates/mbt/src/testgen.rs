//! Complete module-level test suite generation on the abstract Mealy machine
//! and execution against concrete implementations. Two constructions are
//! provided: a state-cover construction with harmonized per-pair
//! distinguishing suffixes, and the classical transition-cover times
//! characterization-set construction as an independent cross-check. Suites
//! are prefix-merged; each maximal input word is one test case.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::eqclass::{classify, InputClass};
use crate::fsm::{distinguishing_trace, state_cover, MealyFsm};
use crate::predicate::Valuation;
use crate::sfsm::{OutputAssignment, Sfsm};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SuiteError {
    #[error("state bound {m} below machine size {n}")]
    BoundTooSmall { m: usize, n: usize },
    #[error("unknown class id `{id}`")]
    UnknownClass { id: String },
}

/// Abstract test case: class-id inputs with the reference machine's outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractTestCase {
    /// (class id, expected output label) per step.
    pub steps: Vec<(String, String)>,
}

/// Concrete test case: input valuations with expected output assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteTestCase {
    pub steps: Vec<(Valuation, Vec<OutputAssignment>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail { step: usize, expected: String, observed: String },
    Error { step: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub case_id: usize,
    pub outcome: Outcome,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }
}

/// Middle sections: all input words of length 1..=depth.
fn middle_words(k: usize, depth: usize) -> Vec<Vec<usize>> {
    let mut words: Vec<Vec<usize>> = vec![vec![]];
    let mut out = Vec::new();
    for _ in 0..depth {
        let mut next = Vec::new();
        for w in &words {
            for i in 0..k {
                let mut e = w.clone();
                e.push(i);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        words = next;
    }
    out
}

/// Keep only maximal words: drop every word that is a prefix of another. In
/// lexicographic order every extension of a word follows it immediately, so
/// checking the successor suffices.
fn prefix_merge(words: BTreeSet<Vec<usize>>) -> Vec<Vec<usize>> {
    let all: Vec<Vec<usize>> = words.into_iter().collect();
    (0..all.len())
        .filter(|&i| {
            i + 1 >= all.len()
                || all[i + 1].len() <= all[i].len()
                || all[i + 1][..all[i].len()] != all[i][..]
        })
        .map(|i| all[i].clone())
        .collect()
}

fn to_cases(f: &MealyFsm, words: Vec<Vec<usize>>) -> Vec<AbstractTestCase> {
    words
        .into_iter()
        .map(|w| {
            let (_, outs) = f.run(f.initial, &w);
            let steps = w
                .iter()
                .zip(&outs)
                .map(|(&i, &o)| (f.inputs[i].clone(), f.outputs[o].clone()))
                .collect();
            AbstractTestCase { steps }
        })
        .collect()
}

/// Access words (state cover) and their target states.
fn cover_words(f: &MealyFsm) -> Vec<(Vec<usize>, usize)> {
    state_cover(f)
        .into_iter()
        .enumerate()
        .filter_map(|(s, w)| w.map(|w| (w, s)))
        .collect()
}

/// State-cover construction with harmonized distinguishing suffixes: every
/// access word, extended by up to `m - n + 1` further inputs, is followed by
/// a shortest trace separating its target state from each other state. The
/// same pair always receives the same suffix, so identification is
/// harmonized across the suite. Completeness against implementations with at
/// most `m` states is validated empirically by the mutation oracle.
pub fn h_method(f: &MealyFsm, m: usize) -> Result<Vec<AbstractTestCase>, SuiteError> {
    let words = identification_words(f, m, false)?;
    Ok(to_cases(f, prefix_merge(words)))
}

/// Classical transition-cover times characterization-set construction: the
/// characterization set collects one shortest distinguishing trace per state
/// pair, and every cover-plus-middle word is extended with all of them.
pub fn w_method(f: &MealyFsm, m: usize) -> Result<Vec<AbstractTestCase>, SuiteError> {
    let words = identification_words(f, m, true)?;
    Ok(to_cases(f, prefix_merge(words)))
}

fn identification_words(
    f: &MealyFsm,
    m: usize,
    characterization_set: bool,
) -> Result<BTreeSet<Vec<usize>>, SuiteError> {
    let n = f.states.len();
    if m < n {
        return Err(SuiteError::BoundTooSmall { m, n });
    }
    let cover = cover_words(f);
    let mut prefixes: Vec<(Vec<usize>, usize)> = cover.clone();
    for (w, _) in &cover {
        for mid in middle_words(f.inputs.len(), m - n + 1) {
            let mut e = w.clone();
            e.extend(mid);
            let (end, _) = f.run(f.initial, &e);
            prefixes.push((e, end));
        }
    }
    // shared suffixes per unordered state pair
    let pair_suffix = |a: usize, b: usize| -> Option<Vec<usize>> {
        distinguishing_trace(f, a.min(b), a.max(b))
    };
    let mut words: BTreeSet<Vec<usize>> = BTreeSet::new();
    if characterization_set {
        let mut w_set: BTreeSet<Vec<usize>> = BTreeSet::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if let Some(s) = pair_suffix(a, b) {
                    w_set.insert(s);
                }
            }
        }
        if w_set.is_empty() {
            w_set.insert(Vec::new()); // one-state machine: bare cover words
        }
        for (w, _) in &prefixes {
            for s in &w_set {
                let mut e = w.clone();
                e.extend(s);
                words.insert(e);
            }
        }
    } else {
        for (w, target) in &prefixes {
            let mut appended = false;
            for other in 0..n {
                if other == *target {
                    continue;
                }
                if let Some(s) = pair_suffix(*target, other) {
                    let mut e = w.clone();
                    e.extend(s);
                    words.insert(e);
                    appended = true;
                }
            }
            if !appended {
                words.insert(w.clone());
            }
        }
    }
    words.remove(&Vec::new());
    Ok(words)
}

/// Replace each abstract input by its class representative; expected outputs
/// carry over unchanged.
pub fn concretize(
    suite: &[AbstractTestCase],
    classes: &[InputClass],
) -> Result<Vec<ConcreteTestCase>, SuiteError> {
    suite
        .iter()
        .map(|case| {
            let steps = case
                .steps
                .iter()
                .map(|(id, out)| {
                    let class = classes
                        .iter()
                        .find(|c| c.id == *id)
                        .ok_or_else(|| SuiteError::UnknownClass { id: id.clone() })?;
                    Ok((class.representative.clone(), parse_output_label(out)))
                })
                .collect::<Result<Vec<_>, SuiteError>>()?;
            Ok(ConcreteTestCase { steps })
        })
        .collect()
}

/// Parse a `target:=value` output label (comma-joined for multiple outputs).
pub fn parse_output_label(label: &str) -> Vec<OutputAssignment> {
    label
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (t, v) = s.split_once(":=").expect("output label has form target:=value");
            OutputAssignment::new(t, v)
        })
        .collect()
}

fn render_outputs(outs: &[OutputAssignment]) -> String {
    outs.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(",")
}

/// Implementation under test: resettable, stepped with input valuations.
pub trait SystemUnderTest {
    fn reset(&mut self);
    fn step(&mut self, u: &Valuation) -> Result<Vec<OutputAssignment>, String>;
}

/// The symbolic reference model run as its own implementation.
pub struct SfsmSut<'a> {
    m: &'a Sfsm,
    state: String,
}

impl<'a> SfsmSut<'a> {
    pub fn new(m: &'a Sfsm) -> Self {
        SfsmSut { m, state: m.initial.clone() }
    }

    pub fn state(&self) -> &str {
        &self.state
    }
}

impl SystemUnderTest for SfsmSut<'_> {
    fn reset(&mut self) {
        self.state = self.m.initial.clone();
    }

    fn step(&mut self, u: &Valuation) -> Result<Vec<OutputAssignment>, String> {
        let (dest, outs) = self.m.step(&self.state, u).map_err(|e| e.to_string())?;
        self.state = dest;
        Ok(outs)
    }
}

/// A finite Mealy machine driven by concrete valuations through the class
/// partition; used to execute mutated machines against concrete suites.
pub struct MealySut<'a> {
    f: &'a MealyFsm,
    classes: &'a [InputClass],
    state: usize,
}

impl<'a> MealySut<'a> {
    pub fn new(f: &'a MealyFsm, classes: &'a [InputClass]) -> Self {
        MealySut { f, classes, state: f.initial }
    }
}

impl SystemUnderTest for MealySut<'_> {
    fn reset(&mut self) {
        self.state = self.f.initial;
    }

    fn step(&mut self, u: &Valuation) -> Result<Vec<OutputAssignment>, String> {
        let class = classify(self.classes, u).ok_or("valuation outside every class")?;
        let i = self
            .f
            .input_index(&class.id)
            .ok_or_else(|| format!("class `{}` missing from alphabet", class.id))?;
        let out = self.f.outputs[self.f.lambda[self.state][i]].clone();
        self.state = self.f.delta[self.state][i];
        Ok(parse_output_label(&out))
    }
}

/// Execute every case from reset; the first output mismatch fails a case, a
/// step failure of the implementation yields an error verdict instead.
pub fn run_suite(suite: &[ConcreteTestCase], sut: &mut dyn SystemUnderTest) -> Vec<Verdict> {
    suite
        .iter()
        .enumerate()
        .map(|(case_id, case)| {
            sut.reset();
            for (step, (u, expected)) in case.steps.iter().enumerate() {
                match sut.step(u) {
                    Err(message) => {
                        return Verdict { case_id, outcome: Outcome::Error { step, message } }
                    }
                    Ok(observed) => {
                        if &observed != expected {
                            return Verdict {
                                case_id,
                                outcome: Outcome::Fail {
                                    step,
                                    expected: render_outputs(expected),
                                    observed: render_outputs(&observed),
                                },
                            };
                        }
                    }
                }
            }
            Verdict { case_id, outcome: Outcome::Pass }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::abstract_machine;
    use crate::eqclass::input_classes;
    use crate::predicate::{equivalent, parse_pred, rat, rat_int, Value};
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

    fn max_len(suite: &[AbstractTestCase]) -> usize {
        suite.iter().map(|c| c.steps.len()).max().unwrap_or(0)
    }

    #[test]
    fn train_suite_size_and_length_bands() {
        let s = setup();
        let n = s.fsm.states.len();
        let h = h_method(&s.fsm, n).unwrap();
        let w = w_method(&s.fsm, n).unwrap();
        assert!(
            (300..=1200).contains(&h.len()),
            "suite of {} cases outside band",
            h.len()
        );
        assert!(max_len(&h) <= 5, "max case length {}", max_len(&h));
        assert!(max_len(&w) <= 5, "max case length {}", max_len(&w));
        // record relative sizes; the pairwise construction aims to be smaller
        println!("suite sizes: pairwise-suffix {} / characterization {}", h.len(), w.len());
    }

    #[test]
    fn suite_generation_is_reproducible() {
        let s = setup();
        let n = s.fsm.states.len();
        assert_eq!(h_method(&s.fsm, n).unwrap(), h_method(&s.fsm, n).unwrap());
        assert_eq!(w_method(&s.fsm, n).unwrap(), w_method(&s.fsm, n).unwrap());
    }

    #[test]
    fn bound_below_state_count_is_an_error() {
        let s = setup();
        let n = s.fsm.states.len();
        assert_eq!(
            h_method(&s.fsm, n - 1),
            Err(SuiteError::BoundTooSmall { m: n - 1, n })
        );
    }

    #[test]
    fn one_state_machine_yields_single_input_cases() {
        let f = MealyFsm::new(
            "unit",
            vec!["i0".into(), "i1".into(), "i2".into()],
            vec!["o0".into()],
            vec!["s0".into()],
            0,
            vec![vec![0, 0, 0]],
            vec![vec![0, 0, 0]],
        )
        .unwrap();
        let h = h_method(&f, 1).unwrap();
        assert_eq!(h.len(), 3);
        assert!(h.iter().all(|c| c.steps.len() == 1));
        let w = w_method(&f, 1).unwrap();
        assert_eq!(h, w);
    }

    #[test]
    fn reference_model_passes_both_full_suites() {
        let s = setup();
        let n = s.fsm.states.len();
        for suite in [h_method(&s.fsm, n).unwrap(), w_method(&s.fsm, n).unwrap()] {
            let concrete = concretize(&suite, &s.classes).unwrap();
            let mut sut = SfsmSut::new(&s.m);
            let verdicts = run_suite(&concrete, &mut sut);
            assert!(verdicts.iter().all(|v| v.passed()), "reference failed its own suite");
        }
    }

    #[test]
    fn output_mutant_fails_at_least_one_case() {
        let s = setup();
        let n = s.fsm.states.len();
        let suite = h_method(&s.fsm, n).unwrap();
        let concrete = concretize(&suite, &s.classes).unwrap();
        let mut bad = s.fsm.clone();
        bad.lambda[0][4] = (bad.lambda[0][4] + 1) % bad.outputs.len();
        let mut sut = MealySut::new(&bad, &s.classes);
        let verdicts = run_suite(&concrete, &mut sut);
        assert!(verdicts.iter().any(|v| matches!(v.outcome, Outcome::Fail { .. })));
    }

    #[test]
    fn concretize_rejects_unknown_class() {
        let s = setup();
        let case = AbstractTestCase { steps: vec![("c99".into(), "a:=zero".into())] };
        assert_eq!(
            concretize(&[case], &s.classes),
            Err(SuiteError::UnknownClass { id: "c99".into() })
        );
    }

    #[test]
    fn empty_suite_concretizes_to_empty() {
        let s = setup();
        assert_eq!(concretize(&[], &s.classes), Ok(vec![]));
    }

    /// The two-step case: still-standing handover (brake window, no
    /// authority) answers `a:=zero`, then a fresh distant authority at
    /// crawling speed accelerates.
    #[test]
    fn two_step_case_concretizes_and_passes() {
        let s = setup();
        let c27 = parse_pred(
            "(and pwr (not omega) (<= (- xB x) 0.6) (<= (- xB xStop) 0) (= v 0))",
        )
        .unwrap();
        let c5 = parse_pred(
            "(and pwr (not omega) (> (- xB x) 0.6) (> (- xB xStop) 200) (>= c 0.9) (> v 0) (< v 1))",
        )
        .unwrap();
        let id_of = |p: &crate::predicate::Pred| {
            s.classes
                .iter()
                .find(|c| equivalent(&c.predicate, p, &s.m.inputs))
                .expect("published class present")
                .id
                .clone()
        };
        let case = AbstractTestCase {
            steps: vec![(id_of(&c27), "a:=zero".into()), (id_of(&c5), "a:=aplus".into())],
        };
        let concrete = concretize(&[case.clone()], &s.classes).unwrap();
        // each chosen valuation classifies back to its abstract input
        for ((u, _), (id, _)) in concrete[0].steps.iter().zip(&case.steps) {
            assert_eq!(&classify(&s.classes, u).unwrap().id, id);
        }
        let mut sut = SfsmSut::new(&s.m);
        let verdicts = run_suite(&concrete, &mut sut);
        assert!(verdicts[0].passed());
    }

    fn val(pwr: bool, omega: bool, x: i64, v_hundredths: i64, c_hundredths: i64, x_b: i64, x_stop: i64) -> Valuation {
        let mut u = Valuation::new();
        u.insert("pwr".into(), Value::Bool(pwr));
        u.insert("omega".into(), Value::Bool(omega));
        u.insert("x".into(), Value::Num(rat_int(x)));
        u.insert("v".into(), Value::Num(rat(v_hundredths, 100)));
        u.insert("c".into(), Value::Num(rat(c_hundredths, 100)));
        u.insert("xB".into(), Value::Num(rat_int(x_b)));
        u.insert("xStop".into(), Value::Num(rat_int(x_stop)));
        u
    }

    /// Four-step case: power-up with a distant authority, a spurious
    /// close-to-target reading at speed (emergency stop), authority restored
    /// at standstill, then acceleration at crawling speed.
    #[test]
    fn four_step_module_case_passes_on_reference() {
        let s = setup();
        let a = |name: &str| vec![OutputAssignment::new("a", name)];
        let case = ConcreteTestCase {
            steps: vec![
                (val(true, false, 0, 0, 95, 10_000, 0), a("aplus")),
                (val(true, false, 10_000, 500, 95, 10_000, 10_100), a("aminus")),
                (val(true, false, 0, 0, 95, 10_000, 0), a("aplus")),
                (val(true, false, 10, 50, 95, 10_000, 20), a("aplus")),
            ],
        };
        let mut sut = SfsmSut::new(&s.m);
        let verdicts = run_suite(&[case], &mut sut);
        assert_eq!(verdicts[0].outcome, Outcome::Pass);
    }

    #[test]
    fn error_verdict_distinct_from_fail() {
        let s = setup();
        struct Broken;
        impl SystemUnderTest for Broken {
            fn reset(&mut self) {}
            fn step(&mut self, _: &Valuation) -> Result<Vec<OutputAssignment>, String> {
                Err("bus fault".into())
            }
        }
        let suite = concretize(
            &[AbstractTestCase { steps: vec![(s.classes[0].id.clone(), "a:=zero".into())] }],
            &s.classes,
        )
        .unwrap();
        let verdicts = run_suite(&suite, &mut Broken);
        assert!(matches!(
            verdicts[0].outcome,
            Outcome::Error { step: 0, ref message } if message == "bus fault"
        ));
    }
}
