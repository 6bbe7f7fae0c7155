//! Deterministic Mealy machines over finite alphabets: partition-refinement
//! minimization with canonical BFS state order, a product-machine equivalence
//! check with shortest counterexamples, breadth-first state covers, and
//! shortest distinguishing traces between states.

use std::collections::{BTreeMap, HashMap, VecDeque};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FsmError {
    #[error("empty state set")]
    NoStates,
    #[error("empty input alphabet")]
    NoInputs,
    #[error("duplicate {kind} `{name}`")]
    Duplicate { kind: &'static str, name: String },
    #[error("transition table shape mismatch at state {state}")]
    TableShape { state: usize },
    #[error("index out of range in row of state {state}")]
    IndexRange { state: usize },
    #[error("input alphabets differ: {left} vs {right} symbols")]
    AlphabetMismatch { left: usize, right: usize },
}

/// Total deterministic Mealy machine. Transitions and outputs are tabulated
/// by (state index, input index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MealyFsm {
    pub name: String,
    /// Input alphabet symbols, index = column of the tables.
    pub inputs: Vec<String>,
    /// Output alphabet symbols.
    pub outputs: Vec<String>,
    /// State names, index = row of the tables.
    pub states: Vec<String>,
    pub initial: usize,
    /// delta[s][i] = successor state index.
    pub delta: Vec<Vec<usize>>,
    /// lambda[s][i] = output symbol index.
    pub lambda: Vec<Vec<usize>>,
}

impl MealyFsm {
    pub fn new(
        name: &str,
        inputs: Vec<String>,
        outputs: Vec<String>,
        states: Vec<String>,
        initial: usize,
        delta: Vec<Vec<usize>>,
        lambda: Vec<Vec<usize>>,
    ) -> Result<Self, FsmError> {
        let m = MealyFsm { name: name.into(), inputs, outputs, states, initial, delta, lambda };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<(), FsmError> {
        if self.states.is_empty() {
            return Err(FsmError::NoStates);
        }
        if self.inputs.is_empty() {
            return Err(FsmError::NoInputs);
        }
        for (kind, names) in [("input", &self.inputs), ("output", &self.outputs), ("state", &self.states)]
        {
            let mut seen = BTreeMap::new();
            for n in names {
                if seen.insert(n, ()).is_some() {
                    return Err(FsmError::Duplicate { kind, name: n.clone() });
                }
            }
        }
        if self.initial >= self.states.len() {
            return Err(FsmError::IndexRange { state: self.initial });
        }
        if self.delta.len() != self.states.len() || self.lambda.len() != self.states.len() {
            return Err(FsmError::TableShape { state: self.delta.len().min(self.lambda.len()) });
        }
        for s in 0..self.states.len() {
            if self.delta[s].len() != self.inputs.len() || self.lambda[s].len() != self.inputs.len() {
                return Err(FsmError::TableShape { state: s });
            }
            if self.delta[s].iter().any(|&d| d >= self.states.len())
                || self.lambda[s].iter().any(|&o| o >= self.outputs.len())
            {
                return Err(FsmError::IndexRange { state: s });
            }
        }
        Ok(())
    }

    pub fn input_index(&self, symbol: &str) -> Option<usize> {
        self.inputs.iter().position(|i| i == symbol)
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    /// Run an input sequence from a state; returns the end state and the
    /// produced output indices.
    pub fn run(&self, from: usize, word: &[usize]) -> (usize, Vec<usize>) {
        let mut s = from;
        let mut out = Vec::with_capacity(word.len());
        for &i in word {
            out.push(self.lambda[s][i]);
            s = self.delta[s][i];
        }
        (s, out)
    }

    /// States reachable from the initial state, in BFS order (stable: input
    /// index order breaks ties).
    fn reachable(&self) -> Vec<usize> {
        let mut seen = vec![false; self.states.len()];
        let mut order = Vec::new();
        let mut queue = VecDeque::new();
        seen[self.initial] = true;
        queue.push_back(self.initial);
        while let Some(s) = queue.pop_front() {
            order.push(s);
            for &d in &self.delta[s] {
                if !seen[d] {
                    seen[d] = true;
                    queue.push_back(d);
                }
            }
        }
        order
    }

    /// Observationally minimal machine: unreachable states dropped, equivalent
    /// states merged by partition refinement, result states renumbered in BFS
    /// order from the initial block. Merged state names join their members
    /// with `+` so reports stay readable and diff-stable.
    pub fn minimize(&self) -> MealyFsm {
        let reach = self.reachable();
        let index_of: HashMap<usize, usize> = reach.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let n = reach.len();
        let k = self.inputs.len();
        // initial partition: states with identical output rows
        let mut block = vec![0usize; n];
        let mut count;
        {
            let mut ids: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
            for (i, &s) in reach.iter().enumerate() {
                let fresh = ids.len();
                block[i] = *ids.entry(self.lambda[s].clone()).or_insert(fresh);
            }
            count = ids.len();
        }
        // refine by successor-block signatures until stable
        loop {
            let mut ids: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
            let mut next = vec![0usize; n];
            for (i, &s) in reach.iter().enumerate() {
                let sig: Vec<usize> = (0..k).map(|a| block[index_of[&self.delta[s][a]]]).collect();
                let fresh = ids.len();
                next[i] = *ids.entry((block[i], sig)).or_insert(fresh);
            }
            if ids.len() == count {
                break;
            }
            count = ids.len();
            block = next;
        }
        // canonical order: BFS over blocks from the initial state's block
        let block_count = block.iter().max().unwrap() + 1;
        let mut order: Vec<usize> = Vec::with_capacity(block_count);
        let mut placed = vec![usize::MAX; block_count];
        let mut queue = VecDeque::new();
        let init_block = block[index_of[&self.initial]];
        placed[init_block] = 0;
        order.push(init_block);
        queue.push_back(init_block);
        while let Some(b) = queue.pop_front() {
            let rep = reach[block.iter().position(|&x| x == b).unwrap()];
            for a in 0..k {
                let d = block[index_of[&self.delta[rep][a]]];
                if placed[d] == usize::MAX {
                    placed[d] = order.len();
                    order.push(d);
                    queue.push_back(d);
                }
            }
        }
        let mut names = vec![String::new(); order.len()];
        let mut delta = vec![vec![0usize; k]; order.len()];
        let mut lambda = vec![vec![0usize; k]; order.len()];
        for (new_b, &b) in order.iter().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| block[i] == b).map(|i| reach[i]).collect();
            names[new_b] = members
                .iter()
                .map(|&s| self.states[s].as_str())
                .collect::<Vec<_>>()
                .join("+");
            let rep = members[0];
            for a in 0..k {
                delta[new_b][a] = placed[block[index_of[&self.delta[rep][a]]]];
                lambda[new_b][a] = self.lambda[rep][a];
            }
        }
        MealyFsm {
            name: format!("{}.min", self.name),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            states: names,
            initial: 0,
            delta,
            lambda,
        }
    }
}

/// Product-machine equivalence check. `Ok(None)` means observationally
/// equivalent; `Ok(Some(word))` is a shortest input sequence (symbols of the
/// shared alphabet) on which the two machines' outputs differ.
pub fn equivalent(f: &MealyFsm, g: &MealyFsm) -> Result<Option<Vec<String>>, FsmError> {
    if f.inputs != g.inputs {
        return Err(FsmError::AlphabetMismatch { left: f.inputs.len(), right: g.inputs.len() });
    }
    let k = f.inputs.len();
    let mut seen: HashMap<(usize, usize), Option<((usize, usize), usize)>> = HashMap::new();
    let start = (f.initial, g.initial);
    seen.insert(start, None);
    let mut queue = VecDeque::new();
    queue.push_back(start);
    while let Some((s, t)) = queue.pop_front() {
        for a in 0..k {
            // symbols match up to index; outputs compare by name so machines
            // with differently ordered output alphabets are still comparable
            if f.outputs[f.lambda[s][a]] != g.outputs[g.lambda[t][a]] {
                let mut word = vec![f.inputs[a].clone()];
                let mut cur = (s, t);
                while let Some(Some((prev, via))) = seen.get(&cur) {
                    word.push(f.inputs[*via].clone());
                    cur = *prev;
                }
                word.reverse();
                return Ok(Some(word));
            }
            let succ = (f.delta[s][a], g.delta[t][a]);
            seen.entry(succ).or_insert_with(|| {
                queue.push_back(succ);
                Some(((s, t), a))
            });
        }
    }
    Ok(None)
}

/// Shortest access sequence (input indices) for every reachable state, by
/// BFS from the initial state. The initial state maps to the empty sequence.
pub fn state_cover(f: &MealyFsm) -> Vec<Option<Vec<usize>>> {
    let mut cover: Vec<Option<Vec<usize>>> = vec![None; f.states.len()];
    cover[f.initial] = Some(Vec::new());
    let mut queue = VecDeque::new();
    queue.push_back(f.initial);
    while let Some(s) = queue.pop_front() {
        for a in 0..f.inputs.len() {
            let d = f.delta[s][a];
            if cover[d].is_none() {
                let mut w = cover[s].clone().unwrap();
                w.push(a);
                cover[d] = Some(w);
                queue.push_back(d);
            }
        }
    }
    cover
}

/// Shortest input sequence (indices) on which runs from `s1` and `s2` produce
/// different outputs; `None` only when the states are observationally
/// equivalent (never for distinct states of a minimal machine).
pub fn distinguishing_trace(f: &MealyFsm, s1: usize, s2: usize) -> Option<Vec<usize>> {
    if s1 == s2 {
        return None;
    }
    let k = f.inputs.len();
    let mut seen: HashMap<(usize, usize), Option<((usize, usize), usize)>> = HashMap::new();
    let start = (s1, s2);
    seen.insert(start, None);
    let mut queue = VecDeque::new();
    queue.push_back(start);
    while let Some((s, t)) = queue.pop_front() {
        for a in 0..k {
            if f.lambda[s][a] != f.lambda[t][a] {
                let mut word = vec![a];
                let mut cur = (s, t);
                while let Some(Some((prev, via))) = seen.get(&cur) {
                    word.push(*via);
                    cur = *prev;
                }
                word.reverse();
                return Some(word);
            }
            let succ = (f.delta[s][a], f.delta[t][a]);
            seen.entry(succ).or_insert_with(|| {
                queue.push_back(succ);
                Some(((s, t), a))
            });
        }
    }
    None
}
