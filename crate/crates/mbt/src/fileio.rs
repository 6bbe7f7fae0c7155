//! Canonical line-oriented artifact formats: model files, class tables,
//! Mealy machines, test suites, scenario trees, requirement lists and
//! scenarios. Writers emit a canonical ordering so files are byte-stable
//! under a write/parse/write round trip and CI diffs stay meaningful.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use num_bigint::BigInt;
use thiserror::Error;

use crate::eqclass::InputClass;
use crate::fsm::MealyFsm;
use crate::predicate::{
    parse_pred, rat_from_decimal, rat_to_string, Decls, Rat, Valuation, Value, VarDecl, VarKind,
};
use crate::sfsm::{Sfsm, Tag, Transition};
use crate::sstt::{ChainStep, Requirement, Sstt, Stimulus};
use crate::testgen::{parse_output_label, AbstractTestCase, ConcreteTestCase};
use crate::train::Scenario;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn err(line: usize, message: impl Into<String>) -> FileError {
    FileError::Parse { line, message: message.into() }
}

fn parse_rat(s: &str, line: usize) -> Result<Rat, FileError> {
    if let Some((n, d)) = s.split_once('/') {
        let n = BigInt::from_str(n).map_err(|e| err(line, format!("numerator: {e}")))?;
        let d = BigInt::from_str(d).map_err(|e| err(line, format!("denominator: {e}")))?;
        return Ok(Rat::new(n, d));
    }
    rat_from_decimal(s).ok_or_else(|| err(line, format!("not a decimal: {s}")))
}

fn render_value(v: &Value) -> String {
    match v {
        Value::Bool(b) => b.to_string(),
        Value::Num(r) => rat_to_string(r),
    }
}

fn parse_value(s: &str, line: usize) -> Result<Value, FileError> {
    match s {
        "true" => Ok(Value::Bool(true)),
        "false" => Ok(Value::Bool(false)),
        other => Ok(Value::Num(parse_rat(other, line)?)),
    }
}

fn render_valuation(u: &Valuation) -> String {
    u.iter().map(|(k, v)| format!("{k}={}", render_value(v))).collect::<Vec<_>>().join(",")
}

fn parse_valuation(s: &str, line: usize) -> Result<Valuation, FileError> {
    let mut u = Valuation::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| err(line, format!("binding: {part}")))?;
        u.insert(k.to_string(), parse_value(v, line)?);
    }
    Ok(u)
}

fn parse_guard(s: &str, line: usize) -> Result<crate::predicate::Pred, FileError> {
    parse_pred(s.trim()).map_err(|e| err(line, format!("predicate: {e}")))
}

// ---------------------------------------------------------------------------
// .model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub sfsm: Sfsm,
    pub constants: BTreeMap<String, f64>,
}

fn render_decl(role: &str, d: &VarDecl) -> String {
    match &d.kind {
        VarKind::Boolean => format!("{role} bool {}", d.name),
        VarKind::Real { bounds, unit } => {
            let unit = if unit.is_empty() { "_" } else { unit };
            match bounds {
                Some((lo, hi)) => {
                    format!("{role} real {} {} {} {unit}", d.name, rat_to_string(lo), rat_to_string(hi))
                }
                None => format!("{role} real {} * * {unit}", d.name),
            }
        }
        VarKind::Enumerated { values } => {
            format!("{role} enum {} {}", d.name, values.join(" "))
        }
    }
}

pub fn write_model(m: &Sfsm, constants: &BTreeMap<String, f64>) -> String {
    let mut out = format!("model {}\n", m.name);
    for (k, v) in constants {
        out.push_str(&format!("const {k} {v}\n"));
    }
    for d in m.inputs.iter() {
        out.push_str(&render_decl("input", d));
        out.push('\n');
    }
    for d in m.outputs.iter() {
        out.push_str(&render_decl("output", d));
        out.push('\n');
    }
    for s in &m.states {
        let mut line = format!("state {s}");
        if *s == m.initial {
            line.push_str(" initial");
        }
        if m.end_states.contains(s) {
            line.push_str(" end");
        }
        out.push_str(&line);
        out.push('\n');
    }
    for t in &m.transitions {
        let outs = t.outputs.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(",");
        out.push_str(&format!("trans {} {} {} {} | {}\n", t.source, t.dest, t.tag, outs, t.guard));
    }
    out
}

fn parse_decl(words: &[&str], line: usize) -> Result<VarDecl, FileError> {
    match words {
        ["bool", name] => Ok(VarDecl::boolean(name)),
        ["real", name, "*", "*", unit] => Ok(VarDecl {
            name: name.to_string(),
            kind: VarKind::Real { bounds: None, unit: if *unit == "_" { String::new() } else { unit.to_string() } },
        }),
        ["real", name, lo, hi, unit] => Ok(VarDecl::real(
            name,
            parse_rat(lo, line)?,
            parse_rat(hi, line)?,
            if *unit == "_" { "" } else { unit },
        )),
        ["enum", name, values @ ..] if !values.is_empty() => Ok(VarDecl::enumerated(name, values)),
        _ => Err(err(line, format!("declaration: {}", words.join(" ")))),
    }
}

pub fn parse_model(text: &str) -> Result<ModelFile, FileError> {
    let mut name = String::new();
    let mut constants = BTreeMap::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut states = Vec::new();
    let mut initial = None;
    let mut end_states = BTreeSet::new();
    let mut transitions = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let lhs = raw.trim();
        if lhs.is_empty() || lhs.starts_with('#') {
            continue;
        }
        let (head, guard_text) = match lhs.split_once(" | ") {
            Some((h, g)) => (h, Some(g)),
            None => (lhs, None),
        };
        let words: Vec<&str> = head.split_whitespace().collect();
        match words.as_slice() {
            ["model", n] => name = n.to_string(),
            ["const", k, v] => {
                let v: f64 = v.parse().map_err(|e| err(line, format!("constant: {e}")))?;
                constants.insert(k.to_string(), v);
            }
            ["input", rest @ ..] => inputs.push(parse_decl(rest, line)?),
            ["output", rest @ ..] => outputs.push(parse_decl(rest, line)?),
            ["state", s, flags @ ..] => {
                states.push(s.to_string());
                for f in flags {
                    match *f {
                        "initial" => initial = Some(s.to_string()),
                        "end" => {
                            end_states.insert(s.to_string());
                        }
                        other => return Err(err(line, format!("state flag: {other}"))),
                    }
                }
            }
            ["trans", src, dst, tag, outs] => {
                let guard = guard_text.ok_or_else(|| err(line, "transition without guard"))?;
                let tag = match *tag {
                    "normal" => Tag::Normal,
                    "robustness" => Tag::Robustness,
                    other => return Err(err(line, format!("tag: {other}"))),
                };
                transitions.push(Transition {
                    source: src.to_string(),
                    guard: parse_guard(guard, line)?,
                    outputs: parse_output_label(outs),
                    dest: dst.to_string(),
                    tag,
                });
            }
            _ => return Err(err(line, format!("unrecognized line: {head}"))),
        }
    }
    let initial = initial.ok_or_else(|| err(0, "no initial state"))?;
    Ok(ModelFile {
        sfsm: Sfsm {
            name,
            inputs: Decls::new(inputs),
            outputs: Decls::new(outputs),
            states,
            initial,
            end_states,
            transitions,
        },
        constants,
    })
}

// ---------------------------------------------------------------------------
// .classes
// ---------------------------------------------------------------------------

pub fn write_classes(model_name: &str, classes: &[InputClass]) -> String {
    let mut out = format!("classes {model_name} {}\n", classes.len());
    for c in classes {
        out.push_str(&format!("{} | {} | {}\n", c.id, c.predicate, render_valuation(&c.representative)));
    }
    out
}

pub fn parse_classes(text: &str) -> Result<(String, Vec<InputClass>), FileError> {
    let mut name = String::new();
    let mut classes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let lhs = raw.trim();
        if lhs.is_empty() {
            continue;
        }
        if let Some(rest) = lhs.strip_prefix("classes ") {
            name = rest.split_whitespace().next().unwrap_or_default().to_string();
            continue;
        }
        let parts: Vec<&str> = lhs.splitn(3, " | ").collect();
        let [id, pred, rep] = parts.as_slice() else {
            return Err(err(line, "expected `id | predicate | representative`"));
        };
        classes.push(InputClass {
            id: id.to_string(),
            predicate: parse_guard(pred, line)?,
            representative: parse_valuation(rep, line)?,
        });
    }
    Ok((name, classes))
}

// ---------------------------------------------------------------------------
// .fsm
// ---------------------------------------------------------------------------

pub fn write_fsm(f: &MealyFsm) -> String {
    let mut out = format!("fsm {}\n", f.name);
    out.push_str(&format!("inputs {}\n", f.inputs.join(" ")));
    out.push_str(&format!("outputs {}\n", f.outputs.join(" ")));
    out.push_str(&format!("states {}\n", f.states.join(" ")));
    out.push_str(&format!("initial {}\n", f.states[f.initial]));
    for s in 0..f.states.len() {
        for i in 0..f.inputs.len() {
            out.push_str(&format!("trans {s} {i} {} {}\n", f.delta[s][i], f.lambda[s][i]));
        }
    }
    out
}

pub fn parse_fsm(text: &str) -> Result<MealyFsm, FileError> {
    let mut name = String::new();
    let mut inputs: Vec<String> = Vec::new();
    let mut outputs: Vec<String> = Vec::new();
    let mut states: Vec<String> = Vec::new();
    let mut initial = 0usize;
    let mut cells: Vec<(usize, usize, usize, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let lhs = raw.trim();
        if lhs.is_empty() {
            continue;
        }
        let words: Vec<&str> = lhs.split_whitespace().collect();
        match words.as_slice() {
            ["fsm", n] => name = n.to_string(),
            ["inputs", rest @ ..] => inputs = rest.iter().map(|s| s.to_string()).collect(),
            ["outputs", rest @ ..] => outputs = rest.iter().map(|s| s.to_string()).collect(),
            ["states", rest @ ..] => states = rest.iter().map(|s| s.to_string()).collect(),
            ["initial", s] => {
                initial = states
                    .iter()
                    .position(|x| x == s)
                    .ok_or_else(|| err(line, format!("unknown initial state {s}")))?;
            }
            ["trans", s, i, d, o] => {
                let p = |w: &str| w.parse::<usize>().map_err(|e| err(line, format!("index: {e}")));
                cells.push((p(s)?, p(i)?, p(d)?, p(o)?));
            }
            _ => return Err(err(line, format!("unrecognized line: {lhs}"))),
        }
    }
    let mut delta = vec![vec![0usize; inputs.len()]; states.len()];
    let mut lambda = vec![vec![0usize; inputs.len()]; states.len()];
    for (s, i, d, o) in cells {
        if s >= states.len() || i >= inputs.len() {
            return Err(err(0, format!("cell ({s},{i}) out of range")));
        }
        delta[s][i] = d;
        lambda[s][i] = o;
    }
    MealyFsm::new(&name, inputs, outputs, states, initial, delta, lambda)
        .map_err(|e| err(0, e.to_string()))
}

// ---------------------------------------------------------------------------
// .suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteFile {
    pub model: String,
    pub method: String,
    pub bound: usize,
    pub abstract_cases: Vec<AbstractTestCase>,
    pub concrete_cases: Vec<ConcreteTestCase>,
}

pub fn write_suite(
    model: &str,
    method: &str,
    bound: usize,
    abstract_cases: &[AbstractTestCase],
    concrete_cases: &[ConcreteTestCase],
) -> String {
    let maxlen = abstract_cases.iter().map(|c| c.steps.len()).max().unwrap_or(0);
    let mut out = format!(
        "suite {model} method {method} bound {bound} cases {} maxlen {maxlen}\n",
        abstract_cases.len()
    );
    for (case, concrete) in abstract_cases.iter().zip(concrete_cases) {
        out.push_str("case\n");
        for ((class, expect), (u, _)) in case.steps.iter().zip(&concrete.steps) {
            out.push_str(&format!("step {class} {expect} | {}\n", render_valuation(u)));
        }
    }
    out
}

pub fn parse_suite(text: &str) -> Result<SuiteFile, FileError> {
    let mut header = (String::new(), String::new(), 0usize);
    let mut abstract_cases: Vec<AbstractTestCase> = Vec::new();
    let mut concrete_cases: Vec<ConcreteTestCase> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let lhs = raw.trim();
        if lhs.is_empty() {
            continue;
        }
        if let Some(rest) = lhs.strip_prefix("suite ") {
            let w: Vec<&str> = rest.split_whitespace().collect();
            if w.len() < 5 || w[1] != "method" || w[3] != "bound" {
                return Err(err(line, "bad suite header"));
            }
            header = (
                w[0].to_string(),
                w[2].to_string(),
                w[4].parse().map_err(|e| err(line, format!("bound: {e}")))?,
            );
        } else if lhs == "case" {
            abstract_cases.push(AbstractTestCase { steps: Vec::new() });
            concrete_cases.push(ConcreteTestCase { steps: Vec::new() });
        } else if let Some(rest) = lhs.strip_prefix("step ") {
            let (head, val) =
                rest.split_once(" | ").ok_or_else(|| err(line, "step without valuation"))?;
            let (class, expect) =
                head.split_once(' ').ok_or_else(|| err(line, "step without expectation"))?;
            let a = abstract_cases.last_mut().ok_or_else(|| err(line, "step before case"))?;
            let c = concrete_cases.last_mut().expect("parallel case lists");
            a.steps.push((class.to_string(), expect.to_string()));
            c.steps.push((parse_valuation(val, line)?, parse_output_label(expect)));
        } else {
            return Err(err(line, format!("unrecognized line: {lhs}")));
        }
    }
    Ok(SuiteFile {
        model: header.0,
        method: header.1,
        bound: header.2,
        abstract_cases,
        concrete_cases,
    })
}

// ---------------------------------------------------------------------------
// .sstt
// ---------------------------------------------------------------------------

pub fn write_sstt(tree: &Sstt) -> String {
    let mut out = format!("sstt nodes {}\n", tree.nodes.len());
    for n in &tree.nodes {
        let parent = n.parent.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "node {} {} parent {parent} seed {} cost {} | {}\n",
            n.id, n.control, n.sim_seed, n.cost, n.invariant
        ));
    }
    for n in &tree.nodes {
        for e in &n.edges {
            let transition = e.transition.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
            let stimuli = if e.stimuli.is_empty() {
                "-".to_string()
            } else {
                e.stimuli
                    .iter()
                    .map(|s| {
                        format!(
                            "{} {}",
                            s.offset,
                            serde_json::to_string(&s.event).expect("events serialize")
                        )
                    })
                    .collect::<Vec<_>>()
                    .join(" ; ")
            };
            out.push_str(&format!(
                "edge {} {} transition {transition} synth {} | {} | {stimuli}\n",
                n.id, e.child, e.synthesize as u8, e.guard
            ));
        }
    }
    out
}

pub fn parse_sstt(text: &str) -> Result<Sstt, FileError> {
    use crate::sstt::{Edge, Node};
    let mut nodes: Vec<Node> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let lhs = raw.trim();
        if lhs.is_empty() || lhs.starts_with("sstt ") {
            continue;
        }
        let mut sections = lhs.split(" | ");
        let head = sections.next().unwrap_or_default();
        let words: Vec<&str> = head.split_whitespace().collect();
        match words.as_slice() {
            ["node", id, control, "parent", parent, "seed", seed, "cost", cost] => {
                let invariant =
                    parse_guard(sections.next().ok_or_else(|| err(line, "node without invariant"))?, line)?;
                let id: usize = id.parse().map_err(|e| err(line, format!("id: {e}")))?;
                if id != nodes.len() {
                    return Err(err(line, "node ids must be consecutive"));
                }
                nodes.push(Node {
                    id,
                    control: control.to_string(),
                    invariant,
                    parent: match *parent {
                        "-" => None,
                        p => Some(p.parse().map_err(|e| err(line, format!("parent: {e}")))?),
                    },
                    edges: Vec::new(),
                    sim_seed: seed.parse().map_err(|e| err(line, format!("seed: {e}")))?,
                    cost: cost.parse().map_err(|e| err(line, format!("cost: {e}")))?,
                });
            }
            ["edge", from, child, "transition", transition, "synth", synth] => {
                let guard =
                    parse_guard(sections.next().ok_or_else(|| err(line, "edge without guard"))?, line)?;
                let stim_text = sections.next().ok_or_else(|| err(line, "edge without stimuli"))?;
                let mut stimuli = Vec::new();
                if stim_text.trim() != "-" {
                    for item in stim_text.split(" ; ") {
                        let (off, ev) = item
                            .trim()
                            .split_once(' ')
                            .ok_or_else(|| err(line, format!("stimulus: {item}")))?;
                        stimuli.push(Stimulus {
                            offset: off.parse().map_err(|e| err(line, format!("offset: {e}")))?,
                            event: serde_json::from_str(ev)
                                .map_err(|e| err(line, format!("event: {e}")))?,
                        });
                    }
                }
                let from: usize = from.parse().map_err(|e| err(line, format!("from: {e}")))?;
                nodes
                    .get_mut(from)
                    .ok_or_else(|| err(line, format!("edge from unknown node {from}")))?
                    .edges
                    .push(Edge {
                        guard,
                        stimuli,
                        synthesize: synth == &"1",
                        transition: match *transition {
                            "-" => None,
                            t => Some(t.parse().map_err(|e| err(line, format!("transition: {e}")))?),
                        },
                        child: child.parse().map_err(|e| err(line, format!("child: {e}")))?,
                    });
            }
            _ => return Err(err(line, format!("unrecognized line: {head}"))),
        }
    }
    if nodes.is_empty() {
        return Err(err(0, "empty tree"));
    }
    Ok(Sstt { nodes })
}

// ---------------------------------------------------------------------------
// .req and .scenario
// ---------------------------------------------------------------------------

pub fn write_requirements(reqs: &[Requirement]) -> String {
    let mut out = format!("requirements {}\n", reqs.len());
    for r in reqs {
        out.push_str(&format!("req {} | {} | {}\n", r.id, r.antecedent, r.consequent));
    }
    out
}

pub fn parse_requirements(text: &str) -> Result<Vec<Requirement>, FileError> {
    let mut reqs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let lhs = raw.trim();
        if lhs.is_empty() || lhs.starts_with("requirements ") {
            continue;
        }
        let Some(rest) = lhs.strip_prefix("req ") else {
            return Err(err(line, format!("unrecognized line: {lhs}")));
        };
        let parts: Vec<&str> = rest.splitn(3, " | ").collect();
        let [id, phi, psi] = parts.as_slice() else {
            return Err(err(line, "expected `req id | antecedent | consequent`"));
        };
        reqs.push(Requirement {
            id: id.to_string(),
            antecedent: parse_guard(phi, line)?,
            consequent: parse_guard(psi, line)?,
        });
    }
    Ok(reqs)
}

pub fn write_scenario(sc: &Scenario) -> String {
    let mut s = serde_json::to_string_pretty(sc).expect("scenario serializes");
    s.push('\n');
    s
}

pub fn parse_scenario(text: &str) -> Result<Scenario, FileError> {
    serde_json::from_str(text).map_err(|e| err(0, e.to_string()))
}

/// A lowered chain rendered as attachable steps (used by dry tooling/tests).
pub fn chain_controls(chain: &[ChainStep]) -> Vec<String> {
    chain.iter().map(|s| s.control.clone()).collect()
}
