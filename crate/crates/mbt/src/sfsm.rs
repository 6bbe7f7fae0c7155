//! Symbolic finite state machines: guarded transitions with output
//! assignments, determinism/completeness validation, and symbolic stepping.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::predicate::{is_satisfiable, Decls, Pred, Valuation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Normal,
    Robustness,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Normal => write!(f, "normal"),
            Tag::Robustness => write!(f, "robustness"),
        }
    }
}

/// Assignment of a constant from the output alphabet to an output variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OutputAssignment {
    pub target: String,
    pub value: String,
}

impl OutputAssignment {
    pub fn new(target: &str, value: &str) -> Self {
        OutputAssignment { target: target.into(), value: value.into() }
    }
}

impl fmt::Display for OutputAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:={}", self.target, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub source: String,
    pub guard: Pred,
    pub outputs: Vec<OutputAssignment>,
    pub dest: String,
    pub tag: Tag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sfsm {
    pub name: String,
    /// Inputs and internal observables, treated uniformly as guard variables.
    pub inputs: Decls,
    pub outputs: Decls,
    pub states: Vec<String>,
    pub initial: String,
    /// States flagged as meaningful end states for end-to-end scenarios.
    pub end_states: BTreeSet<String>,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownState { state: String },
    UnsatisfiableGuard { state: String, index: usize },
    Determinism { state: String, first: usize, second: usize },
    Completeness { state: String },
    Unreachable { state: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownState { state } => write!(f, "unknown state `{state}`"),
            Violation::UnsatisfiableGuard { state, index } => {
                write!(f, "unsatisfiable guard on transition {index} of `{state}`")
            }
            Violation::Determinism { state, first, second } => write!(
                f,
                "determinism violation at `{state}`: guards {first} and {second} overlap"
            ),
            Violation::Completeness { state } => {
                write!(f, "completeness violation at `{state}`: guards do not cover the input space")
            }
            Violation::Unreachable { state } => write!(f, "state `{state}` unreachable"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StepError {
    #[error("no enabled transition at `{state}` (model incomplete)")]
    Incomplete { state: String },
    #[error("evaluation failed at `{state}`: {source}")]
    Eval {
        state: String,
        #[source]
        source: crate::predicate::EvalError,
    },
}

impl Sfsm {
    pub fn outgoing<'a>(&'a self, state: &'a str) -> impl Iterator<Item = (usize, &'a Transition)> + 'a {
        self.transitions
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.source == state)
    }

    /// Check determinism, completeness, and reachability; returns every
    /// violated condition with the offending state and guard pair.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let known: BTreeSet<&str> = self.states.iter().map(|s| s.as_str()).collect();
        for t in &self.transitions {
            for s in [&t.source, &t.dest] {
                if !known.contains(s.as_str()) {
                    report.violations.push(Violation::UnknownState { state: s.clone() });
                }
            }
        }
        if !report.is_clean() {
            return report;
        }
        for state in &self.states {
            let outgoing: Vec<(usize, &Transition)> = self.outgoing(state).collect();
            for (i, t) in &outgoing {
                if !is_satisfiable(&t.guard, &self.inputs) {
                    report
                        .violations
                        .push(Violation::UnsatisfiableGuard { state: state.clone(), index: *i });
                }
            }
            for (a, (i, ta)) in outgoing.iter().enumerate() {
                for (j, tb) in outgoing.iter().skip(a + 1) {
                    let both = Pred::and(vec![ta.guard.clone(), tb.guard.clone()]);
                    if is_satisfiable(&both, &self.inputs) {
                        report.violations.push(Violation::Determinism {
                            state: state.clone(),
                            first: *i,
                            second: *j,
                        });
                    }
                }
            }
            let cover = Pred::or(outgoing.iter().map(|(_, t)| t.guard.clone()).collect());
            if is_satisfiable(&cover.negate(), &self.inputs) {
                report.violations.push(Violation::Completeness { state: state.clone() });
            }
        }
        // reachability over the transition graph
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(self.initial.as_str());
        queue.push_back(self.initial.as_str());
        let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
        for t in &self.transitions {
            adj.entry(t.source.as_str()).or_default().push(t.dest.as_str());
        }
        while let Some(s) = queue.pop_front() {
            for d in adj.get(s).into_iter().flatten() {
                if seen.insert(d) {
                    queue.push_back(d);
                }
            }
        }
        for state in &self.states {
            if !seen.contains(state.as_str()) {
                report.violations.push(Violation::Unreachable { state: state.clone() });
            }
        }
        report
    }

    /// Fire the unique enabled transition at `state` under valuation `u`.
    pub fn step(&self, state: &str, u: &Valuation) -> Result<(String, Vec<OutputAssignment>), StepError> {
        self.step_indexed(state, u).map(|(_, d, o)| (d, o))
    }

    /// As `step`, also reporting the global index of the fired transition.
    pub fn step_indexed(
        &self,
        state: &str,
        u: &Valuation,
    ) -> Result<(usize, String, Vec<OutputAssignment>), StepError> {
        for (i, t) in self.outgoing(state) {
            match t.guard.evaluate(u) {
                Ok(true) => return Ok((i, t.dest.clone(), t.outputs.clone())),
                Ok(false) => {}
                Err(e) => return Err(StepError::Eval { state: state.into(), source: e }),
            }
        }
        Err(StepError::Incomplete { state: state.into() })
    }

    /// Stable-ordered transition indices filtered by tag.
    pub fn transitions_tagged(&self, tag: Tag) -> Vec<usize> {
        self.transitions
            .iter()
            .enumerate()
            .filter(|(_, t)| t.tag == tag)
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::{parse_pred, VarDecl};
    use crate::train;

    fn tiny_decls() -> Decls {
        Decls::new(vec![VarDecl::boolean("pwr")])
    }

    fn guarded(src: &str, guard: &str, out: &str, dst: &str) -> Transition {
        Transition {
            source: src.into(),
            guard: parse_pred(guard).unwrap(),
            outputs: vec![OutputAssignment::new("a", out)],
            dest: dst.into(),
            tag: Tag::Normal,
        }
    }

    #[test]
    fn shipped_train_model_validates_clean() {
        let m = train::controller_model();
        let report = m.validate();
        assert!(report.is_clean(), "violations: {:?}", report.violations);
    }

    #[test]
    fn determinism_violation_detected() {
        let m = Sfsm {
            name: "bad".into(),
            inputs: tiny_decls(),
            outputs: Decls::new(vec![VarDecl::enumerated("a", &["zero"])]),
            states: vec!["S".into()],
            initial: "S".into(),
            end_states: BTreeSet::new(),
            transitions: vec![
                guarded("S", "(not pwr)", "zero", "S"),
                guarded("S", "(not pwr)", "zero", "S"),
                guarded("S", "pwr", "zero", "S"),
            ],
        };
        let report = m.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Determinism { state, .. } if state == "S")));
    }

    #[test]
    fn completeness_violation_detected() {
        let m = Sfsm {
            name: "bad".into(),
            inputs: tiny_decls(),
            outputs: Decls::new(vec![VarDecl::enumerated("a", &["zero"])]),
            states: vec!["S".into()],
            initial: "S".into(),
            end_states: BTreeSet::new(),
            transitions: vec![guarded("S", "(not pwr)", "zero", "S")],
        };
        let report = m.validate();
        assert_eq!(report.violations, vec![Violation::Completeness { state: "S".into() }]);
    }

    #[test]
    fn tag_partition() {
        let m = train::controller_model();
        let normal = m.transitions_tagged(Tag::Normal);
        let robust = m.transitions_tagged(Tag::Robustness);
        assert_eq!(normal.len() + robust.len(), m.transitions.len());
        let mut all: Vec<usize> = normal.iter().chain(robust.iter()).copied().collect();
        all.sort_unstable();
        let expect: Vec<usize> = (0..m.transitions.len()).collect();
        assert_eq!(all, expect);
        assert!(!robust.is_empty(), "train model carries robustness tags");
    }
}
