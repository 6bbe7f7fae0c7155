//! Guard and invariant logic: affine atoms over typed variables, boolean
//! combinations in negation normal form, satisfiability via truth-assignment
//! search over atoms with Fourier-Motzkin elimination on the arithmetic side,
//! and deterministic model finding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

pub type Rat = BigRational;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Parse a decimal literal such as `0.6`, `-22`, or `3/5` into an exact rational.
pub fn rat_from_decimal(s: &str) -> Option<Rat> {
    let s = s.trim();
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let digits: String = format!("{}{}", int.trim_start_matches(['+', '-']), frac);
        let num: BigInt = digits.parse().ok()?;
        let den = BigInt::from(10u32).pow(frac.len() as u32);
        let sign = if s.starts_with('-') { -1 } else { 1 };
        Some(Rat::new(BigInt::from(sign) * num, den))
    } else if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.parse().ok()?;
        let d: BigInt = d.parse().ok()?;
        if d.is_zero() {
            return None;
        }
        Some(Rat::new(n, d))
    } else {
        let n: BigInt = s.parse().ok()?;
        Some(Rat::from_integer(n))
    }
}

/// Render a rational as a decimal when it terminates, fraction otherwise.
pub fn rat_to_string(r: &Rat) -> String {
    let mut den = r.denom().clone();
    let mut twos = 0u32;
    let mut fives = 0u32;
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    while (&den % &two).is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if den == BigInt::one() {
        let k = twos.max(fives);
        let scale = BigInt::from(10u32).pow(k);
        let scaled = r.numer() * &scale / r.denom();
        if k == 0 {
            return scaled.to_string();
        }
        let neg = scaled.is_negative();
        let abs = scaled.magnitude().to_string();
        let abs = if abs.len() <= k as usize {
            format!("{}{}", "0".repeat(k as usize + 1 - abs.len()), abs)
        } else {
            abs
        };
        let (int, frac) = abs.split_at(abs.len() - k as usize);
        format!("{}{}.{}", if neg { "-" } else { "" }, int, frac)
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Convert a runtime observation to the exact rational used in guard
/// decisions: rounded to nine decimal places, so values within 1e-9 of a
/// guard boundary land exactly on it.
pub fn rat_from_f64_lifted(x: f64) -> Rat {
    let scaled = (x * 1e9).round();
    Rat::new(
        BigInt::from(scaled as i128),
        BigInt::from(1_000_000_000u64),
    )
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    let num: f64 = r.numer().to_string().parse().unwrap_or(f64::NAN);
    let den: f64 = r.denom().to_string().parse().unwrap_or(f64::NAN);
    num / den
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VarKind {
    Boolean,
    /// Real with an optional closed interval bound and a unit tag (m, m/s, ...).
    Real {
        bounds: Option<(Rat, Rat)>,
        unit: String,
    },
    Enumerated {
        values: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub kind: VarKind,
}

impl VarDecl {
    pub fn boolean(name: &str) -> Self {
        VarDecl { name: name.into(), kind: VarKind::Boolean }
    }

    pub fn real(name: &str, lo: Rat, hi: Rat, unit: &str) -> Self {
        assert!(lo <= hi, "real bounds must satisfy lo <= hi for {name}");
        VarDecl { name: name.into(), kind: VarKind::Real { bounds: Some((lo, hi)), unit: unit.into() } }
    }

    pub fn enumerated(name: &str, values: &[&str]) -> Self {
        VarDecl {
            name: name.into(),
            kind: VarKind::Enumerated { values: values.iter().map(|s| s.to_string()).collect() },
        }
    }
}

/// An ordered set of declarations; order is the canonical variable order used
/// by model finding and class enumeration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Decls {
    decls: Vec<VarDecl>,
}

impl Decls {
    pub fn new(decls: Vec<VarDecl>) -> Self {
        let mut seen = BTreeSet::new();
        for d in &decls {
            assert!(seen.insert(d.name.clone()), "duplicate declaration {}", d.name);
        }
        Decls { decls }
    }

    pub fn get(&self, name: &str) -> Option<&VarDecl> {
        self.decls.iter().find(|d| d.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &VarDecl> {
        self.decls.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.decls.iter().map(|d| d.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.decls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decls.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Bool(bool),
    Num(Rat),
}

impl Value {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_num(&self) -> Option<&Rat> {
        match self {
            Value::Num(r) => Some(r),
            _ => None,
        }
    }
}

/// Total assignment of declared variables.
pub type Valuation = BTreeMap<String, Value>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("variable `{0}` has the wrong type")]
    TypeMismatch(String),
}

/// Affine expression: sum of coeff * var plus a constant, exact rationals.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Affine {
    pub coeffs: BTreeMap<String, Rat>,
    pub constant: Rat,
}

impl Affine {
    pub fn var(name: &str) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(name.to_string(), Rat::one());
        Affine { coeffs, constant: Rat::zero() }
    }

    pub fn constant(c: Rat) -> Self {
        Affine { coeffs: BTreeMap::new(), constant: c }
    }

    pub fn scale(&self, k: &Rat) -> Self {
        if k.is_zero() {
            return Affine::default();
        }
        Affine {
            coeffs: self.coeffs.iter().map(|(v, c)| (v.clone(), c * k)).collect(),
            constant: &self.constant * k,
        }
    }

    pub fn add(&self, other: &Affine) -> Self {
        let mut coeffs = self.coeffs.clone();
        for (v, c) in &other.coeffs {
            let entry = coeffs.entry(v.clone()).or_insert_with(Rat::zero);
            *entry += c;
            if entry.is_zero() {
                coeffs.remove(v);
            }
        }
        Affine { coeffs, constant: &self.constant + &other.constant }
    }

    pub fn sub(&self, other: &Affine) -> Self {
        self.add(&other.scale(&-Rat::one()))
    }

    pub fn eval(&self, u: &Valuation) -> Result<Rat, EvalError> {
        let mut acc = self.constant.clone();
        for (v, c) in &self.coeffs {
            let val = u.get(v).ok_or_else(|| EvalError::Unbound(v.clone()))?;
            let n = val.as_num().ok_or_else(|| EvalError::TypeMismatch(v.clone()))?;
            acc += c * n;
        }
        Ok(acc)
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.coeffs.keys().map(|s| s.as_str())
    }
}

/// Canonical comparison relation against zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rel {
    Lt,
    Le,
    Eq,
}

/// Atoms are canonicalized: comparisons are `expr rel 0` with `rel` one of
/// `<`, `<=`, `=`; the other operators appear as negated literals.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Atom {
    BoolVar(String),
    Cmp { expr: Affine, rel: Rel },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl Atom {
    /// Normalize `lhs op rhs` into a canonical atom plus a polarity.
    pub fn normalize(lhs: &Affine, op: CmpOp, rhs: &Affine) -> (Atom, bool) {
        let mut d = lhs.sub(rhs);
        match op {
            CmpOp::Lt => (Atom::Cmp { expr: d, rel: Rel::Lt }, true),
            CmpOp::Ge => (Atom::Cmp { expr: d, rel: Rel::Lt }, false),
            CmpOp::Le => (Atom::Cmp { expr: d, rel: Rel::Le }, true),
            CmpOp::Gt => (Atom::Cmp { expr: d, rel: Rel::Le }, false),
            CmpOp::Eq => {
                // sign-normalize so x = c and c = x share an atom
                if let Some((_, k)) = d.coeffs.iter().next() {
                    if k.is_negative() {
                        d = d.scale(&-Rat::one());
                    }
                } else if d.constant.is_negative() {
                    d = d.scale(&-Rat::one());
                }
                (Atom::Cmp { expr: d, rel: Rel::Eq }, true)
            }
        }
    }

    pub fn vars(&self) -> BTreeSet<String> {
        match self {
            Atom::BoolVar(v) => std::iter::once(v.clone()).collect(),
            Atom::Cmp { expr, .. } => expr.vars().map(|s| s.to_string()).collect(),
        }
    }

    pub fn eval(&self, u: &Valuation) -> Result<bool, EvalError> {
        match self {
            Atom::BoolVar(v) => {
                let val = u.get(v).ok_or_else(|| EvalError::Unbound(v.clone()))?;
                val.as_bool().ok_or_else(|| EvalError::TypeMismatch(v.clone()))
            }
            Atom::Cmp { expr, rel } => {
                let e = expr.eval(u)?;
                Ok(match rel {
                    Rel::Lt => e < Rat::zero(),
                    Rel::Le => e <= Rat::zero(),
                    Rel::Eq => e.is_zero(),
                })
            }
        }
    }

    /// Constant-fold an atom without variables.
    fn constant_truth(&self) -> Option<bool> {
        match self {
            Atom::Cmp { expr, rel } if expr.coeffs.is_empty() => Some(match rel {
                Rel::Lt => expr.constant < Rat::zero(),
                Rel::Le => expr.constant <= Rat::zero(),
                Rel::Eq => expr.constant.is_zero(),
            }),
            _ => None,
        }
    }
}

/// Negation-normal-form predicate: negation only on atoms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pred {
    True,
    False,
    Lit { atom: Atom, positive: bool },
    And(Vec<Pred>),
    Or(Vec<Pred>),
}

impl Pred {
    pub fn lit(atom: Atom, positive: bool) -> Pred {
        if let Some(b) = atom.constant_truth() {
            return if b == positive { Pred::True } else { Pred::False };
        }
        Pred::Lit { atom, positive }
    }

    pub fn bool_var(name: &str, positive: bool) -> Pred {
        Pred::Lit { atom: Atom::BoolVar(name.into()), positive }
    }

    pub fn cmp(lhs: Affine, op: CmpOp, rhs: Affine) -> Pred {
        let (atom, positive) = Atom::normalize(&lhs, op, &rhs);
        Pred::lit(atom, positive)
    }

    pub fn and(ps: Vec<Pred>) -> Pred {
        let mut out = Vec::new();
        for p in ps {
            match p {
                Pred::True => {}
                Pred::False => return Pred::False,
                Pred::And(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Pred::True,
            1 => out.pop().unwrap(),
            _ => Pred::And(out),
        }
    }

    pub fn or(ps: Vec<Pred>) -> Pred {
        let mut out = Vec::new();
        for p in ps {
            match p {
                Pred::False => {}
                Pred::True => return Pred::True,
                Pred::Or(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Pred::False,
            1 => out.pop().unwrap(),
            _ => Pred::Or(out),
        }
    }

    /// Push a negation through, staying in NNF.
    pub fn negate(&self) -> Pred {
        match self {
            Pred::True => Pred::False,
            Pred::False => Pred::True,
            Pred::Lit { atom, positive } => Pred::Lit { atom: atom.clone(), positive: !positive },
            Pred::And(ps) => Pred::or(ps.iter().map(|p| p.negate()).collect()),
            Pred::Or(ps) => Pred::and(ps.iter().map(|p| p.negate()).collect()),
        }
    }

    pub fn vars(&self) -> BTreeSet<String> {
        match self {
            Pred::True | Pred::False => BTreeSet::new(),
            Pred::Lit { atom, .. } => atom.vars(),
            Pred::And(ps) | Pred::Or(ps) => ps.iter().flat_map(|p| p.vars()).collect(),
        }
    }

    pub fn atoms(&self) -> BTreeSet<Atom> {
        match self {
            Pred::True | Pred::False => BTreeSet::new(),
            Pred::Lit { atom, .. } => std::iter::once(atom.clone()).collect(),
            Pred::And(ps) | Pred::Or(ps) => ps.iter().flat_map(|p| p.atoms()).collect(),
        }
    }

    pub fn evaluate(&self, u: &Valuation) -> Result<bool, EvalError> {
        match self {
            Pred::True => Ok(true),
            Pred::False => Ok(false),
            Pred::Lit { atom, positive } => Ok(atom.eval(u)? == *positive),
            Pred::And(ps) => {
                for p in ps {
                    if !p.evaluate(u)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Pred::Or(ps) => {
                for p in ps {
                    if p.evaluate(u)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    /// Substitute a truth value for one atom, simplifying.
    fn assign(&self, atom: &Atom, value: bool) -> Pred {
        match self {
            Pred::True => Pred::True,
            Pred::False => Pred::False,
            Pred::Lit { atom: a, positive } => {
                if a == atom {
                    if value == *positive {
                        Pred::True
                    } else {
                        Pred::False
                    }
                } else {
                    self.clone()
                }
            }
            Pred::And(ps) => Pred::and(ps.iter().map(|p| p.assign(atom, value)).collect()),
            Pred::Or(ps) => Pred::or(ps.iter().map(|p| p.assign(atom, value)).collect()),
        }
    }

    /// Pick some atom still present (first in atom order).
    fn pick_atom(&self) -> Option<Atom> {
        self.atoms().into_iter().next()
    }

    /// A literal whose truth value is forced (top-level conjunct).
    fn pick_unit(&self) -> Option<(Atom, bool)> {
        match self {
            Pred::Lit { atom, positive } => Some((atom.clone(), *positive)),
            Pred::And(ps) => ps.iter().find_map(|p| match p {
                Pred::Lit { atom, positive } => Some((atom.clone(), *positive)),
                _ => None,
            }),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Linear constraints and Fourier-Motzkin elimination
// ---------------------------------------------------------------------------

/// Normalized constraint `expr <= 0` (weak) or `expr < 0` (strict).
#[derive(Debug, Clone, PartialEq, Eq)]
struct Constraint {
    expr: Affine,
    weak: bool,
}

impl Constraint {
    fn trivially(&self) -> Option<bool> {
        if !self.expr.coeffs.is_empty() {
            return None;
        }
        Some(if self.weak {
            self.expr.constant <= Rat::zero()
        } else {
            self.expr.constant < Rat::zero()
        })
    }
}

/// Constraints induced by a comparison literal. Negated equalities are
/// disjunctive and yield two alternative constraint sets.
fn literal_constraints(atom: &Atom, positive: bool) -> Vec<Vec<Constraint>> {
    let Atom::Cmp { expr, rel } = atom else {
        return vec![vec![]];
    };
    match (rel, positive) {
        (Rel::Lt, true) => vec![vec![Constraint { expr: expr.clone(), weak: false }]],
        (Rel::Lt, false) => vec![vec![Constraint { expr: expr.scale(&-Rat::one()), weak: true }]],
        (Rel::Le, true) => vec![vec![Constraint { expr: expr.clone(), weak: true }]],
        (Rel::Le, false) => vec![vec![Constraint { expr: expr.scale(&-Rat::one()), weak: false }]],
        (Rel::Eq, true) => vec![vec![
            Constraint { expr: expr.clone(), weak: true },
            Constraint { expr: expr.scale(&-Rat::one()), weak: true },
        ]],
        (Rel::Eq, false) => vec![
            vec![Constraint { expr: expr.clone(), weak: false }],
            vec![Constraint { expr: expr.scale(&-Rat::one()), weak: false }],
        ],
    }
}

/// Eliminate `var`, returning the projected system, or None if a trivially
/// false constraint appears.
fn fm_eliminate(system: &[Constraint], var: &str) -> Option<Vec<Constraint>> {
    let mut lower: Vec<(Affine, bool)> = Vec::new();
    let mut upper: Vec<(Affine, bool)> = Vec::new();
    let mut rest = Vec::new();
    for c in system {
        match c.expr.coeffs.get(var) {
            None => rest.push(c.clone()),
            Some(k) => {
                let mut e = c.expr.clone();
                e.coeffs.remove(var);
                let bound = e.scale(&(-Rat::one() / k));
                if k.is_positive() {
                    upper.push((bound, c.weak));
                } else {
                    lower.push((bound, c.weak));
                }
            }
        }
    }
    for (lo, lo_weak) in &lower {
        for (hi, hi_weak) in &upper {
            let expr = lo.sub(hi);
            let weak = *lo_weak && *hi_weak;
            let c = Constraint { expr, weak };
            match c.trivially() {
                Some(false) => return None,
                Some(true) => {}
                None => rest.push(c),
            }
        }
    }
    Some(rest)
}

fn system_satisfiable(system: &[Constraint]) -> bool {
    let mut vars: BTreeSet<String> = BTreeSet::new();
    let mut sys: Vec<Constraint> = Vec::new();
    for c in system {
        match c.trivially() {
            Some(false) => return false,
            Some(true) => {}
            None => {
                vars.extend(c.expr.vars().map(|s| s.to_string()));
                sys.push(c.clone());
            }
        }
    }
    for v in &vars {
        match fm_eliminate(&sys, v) {
            None => return false,
            Some(next) => sys = next,
        }
    }
    sys.iter().all(|c| c.trivially() != Some(false))
}

fn bound_constraints(vars: &BTreeSet<String>, decls: &Decls) -> Vec<Constraint> {
    let mut out = Vec::new();
    for v in vars {
        if let Some(VarDecl { kind: VarKind::Real { bounds: Some((lo, hi)), .. }, .. }) = decls.get(v)
        {
            let mut e = Affine::var(v).scale(&-Rat::one());
            e.constant += lo;
            out.push(Constraint { expr: e, weak: true });
            let mut e = Affine::var(v);
            e.constant -= hi;
            out.push(Constraint { expr: e, weak: true });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Satisfiability, model finding, implication
// ---------------------------------------------------------------------------

/// Search truth assignments to the atoms of `p`, pruning branches whose
/// accumulated arithmetic constraints are infeasible. `on_leaf` receives the
/// constraint system and boolean-atom assignment of each satisfiable leaf and
/// may stop the search by returning Some.
fn search<T>(
    p: &Pred,
    constraints: Vec<Constraint>,
    bools: BTreeMap<String, bool>,
    on_leaf: &mut dyn FnMut(&[Constraint], &BTreeMap<String, bool>) -> Option<T>,
) -> Option<T> {
    match p {
        Pred::False => None,
        Pred::True => on_leaf(&constraints, &bools),
        _ => {
            // unit propagation: forced literals don't branch
            let (atom, values) = match p.pick_unit() {
                Some((atom, value)) => (atom, vec![value]),
                None => (
                    p.pick_atom().expect("non-trivial predicate has an atom"),
                    vec![true, false],
                ),
            };
            for value in values {
                let q = p.assign(&atom, value);
                if q == Pred::False {
                    continue;
                }
                match &atom {
                    Atom::BoolVar(name) => {
                        let mut b = bools.clone();
                        b.insert(name.clone(), value);
                        if let Some(t) = search(q.as_ref(), constraints.clone(), b, on_leaf) {
                            return Some(t);
                        }
                    }
                    Atom::Cmp { .. } => {
                        for alt in literal_constraints(&atom, value) {
                            let mut cs = constraints.clone();
                            cs.extend(alt);
                            if !system_satisfiable(&cs) {
                                continue;
                            }
                            if let Some(t) = search(q.as_ref(), cs, bools.clone(), on_leaf) {
                                return Some(t);
                            }
                        }
                    }
                }
            }
            None
        }
    }
}

trait AsRefPred {
    fn as_ref(&self) -> &Pred;
}

impl AsRefPred for Pred {
    fn as_ref(&self) -> &Pred {
        self
    }
}

pub fn is_satisfiable(p: &Pred, decls: &Decls) -> bool {
    let bounds = bound_constraints(&p.vars(), decls);
    search(p, bounds, BTreeMap::new(), &mut |cs, _| {
        if system_satisfiable(cs) {
            Some(())
        } else {
            None
        }
    })
    .is_some()
}

pub fn implies(p: &Pred, q: &Pred, decls: &Decls) -> bool {
    !is_satisfiable(&Pred::and(vec![p.clone(), q.negate()]), decls)
}

pub fn equivalent(p: &Pred, q: &Pred, decls: &Decls) -> bool {
    implies(p, q, decls) && implies(q, p, decls)
}

/// Feasible interval of `var` in a system whose other variables are fixed.
fn interval(system: &[Constraint], var: &str) -> Option<(Option<Rat>, bool, Option<Rat>, bool)> {
    let mut lo: Option<(Rat, bool)> = None;
    let mut hi: Option<(Rat, bool)> = None;
    for c in system {
        match c.expr.coeffs.get(var) {
            None => {
                if c.trivially() == Some(false) {
                    return None;
                }
            }
            Some(k) => {
                let b = -&c.expr.constant / k;
                let strict = !c.weak;
                if k.is_positive() {
                    match &hi {
                        Some((cur, cs)) if *cur < b || (*cur == b && (*cs || !strict)) => {}
                        _ => hi = Some((b, strict)),
                    }
                } else {
                    match &lo {
                        Some((cur, cs)) if *cur > b || (*cur == b && (*cs || !strict)) => {}
                        _ => lo = Some((b, strict)),
                    }
                }
            }
        }
    }
    if let (Some((l, ls)), Some((h, hs))) = (&lo, &hi) {
        if l > h || (l == h && (*ls || *hs)) {
            return None;
        }
    }
    Some((
        lo.as_ref().map(|(r, _)| r.clone()),
        lo.map(|(_, s)| s).unwrap_or(false),
        hi.as_ref().map(|(r, _)| r.clone()),
        hi.map(|(_, s)| s).unwrap_or(false),
    ))
}

/// Pick the decimal with the fewest fraction digits inside the interval,
/// nearest to the midpoint (ties toward the smaller value).
fn pick_decimal(lo: &Option<Rat>, lo_strict: bool, hi: &Option<Rat>, hi_strict: bool) -> Rat {
    let (lo_v, hi_v): (Rat, Rat) = match (lo, hi) {
        (Some(l), Some(h)) => (l.clone(), h.clone()),
        (Some(l), None) => (l.clone(), l + rat_int(1)),
        (None, Some(h)) => (h - rat_int(1), h.clone()),
        (None, None) => (rat_int(0), rat_int(0)),
    };
    if lo_v == hi_v {
        return lo_v;
    }
    let mid = (&lo_v + &hi_v) / rat_int(2);
    for k in 0u32..=15 {
        let step = Rat::new(BigInt::one(), BigInt::from(10u32).pow(k));
        let mut lo_grid = (&lo_v / &step).ceil() * &step;
        if (lo_strict && lo_grid == lo_v) || lo_grid < lo_v {
            lo_grid += &step;
        }
        let mut hi_grid = (&hi_v / &step).floor() * &step;
        if (hi_strict && hi_grid == hi_v) || hi_grid > hi_v {
            hi_grid -= &step;
        }
        if lo_grid > hi_grid {
            continue;
        }
        // grid point nearest the midpoint, ties toward the smaller value
        let mut best = ((&mid / &step) - rat(1, 2)).ceil() * &step;
        if best < lo_grid {
            best = lo_grid;
        } else if best > hi_grid {
            best = hi_grid;
        }
        return best;
    }
    mid
}

/// Solve a feasible linear system by staged elimination and back-substitution
/// in declaration order.
fn solve_reals(system: &[Constraint], vars: &[String]) -> Option<BTreeMap<String, Rat>> {
    let mut stages: Vec<Vec<Constraint>> = Vec::with_capacity(vars.len() + 1);
    stages.push(system.to_vec());
    for v in vars.iter().rev() {
        let top = stages.last().unwrap();
        match fm_eliminate(top, v) {
            None => return None,
            Some(next) => stages.push(next),
        }
    }
    if stages.last().unwrap().iter().any(|c| c.trivially() == Some(false)) {
        return None;
    }
    let mut solution: BTreeMap<String, Rat> = BTreeMap::new();
    for (i, v) in vars.iter().enumerate() {
        let sys = &stages[vars.len() - 1 - i];
        let restricted: Vec<Constraint> = sys
            .iter()
            .map(|c| {
                let mut e = c.expr.clone();
                for (fixed, value) in &solution {
                    if let Some(k) = e.coeffs.remove(fixed) {
                        e.constant += k * value;
                    }
                }
                Constraint { expr: e, weak: c.weak }
            })
            .collect();
        let (lo, ls, hi, hs) = interval(&restricted, v)?;
        solution.insert(v.clone(), pick_decimal(&lo, ls, &hi, hs));
    }
    Some(solution)
}

fn default_value(d: &VarDecl) -> Value {
    match &d.kind {
        VarKind::Boolean => Value::Bool(false),
        VarKind::Real { bounds, .. } => {
            let v = match bounds {
                Some((lo, hi)) => pick_decimal(&Some(lo.clone()), false, &Some(hi.clone()), false),
                None => Rat::zero(),
            };
            Value::Num(v)
        }
        VarKind::Enumerated { values } => {
            Value::Bool(values.is_empty()) // enumerated vars never occur in predicates
        }
    }
}

/// Deterministic model finding: the first satisfiable branch in canonical
/// search order wins; reals take the coarsest decimal near the midpoint of
/// their feasible interval, assigned in declaration order; unconstrained
/// declared variables take defaults (false / interval midpoint).
pub fn find_model(p: &Pred, decls: &Decls) -> Option<Valuation> {
    let bounds = bound_constraints(&p.vars(), decls);
    let rvars: Vec<String> = decls
        .iter()
        .filter(|d| matches!(d.kind, VarKind::Real { .. }))
        .map(|d| d.name.clone())
        .filter(|n| p.vars().contains(n))
        .collect();
    search(p, bounds, BTreeMap::new(), &mut |cs, bools| {
        let reals = solve_reals(cs, &rvars)?;
        let mut u = Valuation::new();
        for (v, b) in bools {
            u.insert(v.clone(), Value::Bool(*b));
        }
        for (v, r) in reals {
            u.insert(v, Value::Num(r));
        }
        for d in decls.iter() {
            u.entry(d.name.clone()).or_insert_with(|| default_value(d));
        }
        Some(u)
    })
}

// ---------------------------------------------------------------------------
// Textual syntax (s-expressions)
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("predicate syntax error: {0}")]
    Syntax(String),
}

#[derive(Debug, Clone)]
enum Sexp {
    Sym(String),
    List(Vec<Sexp>),
}

fn tokenize(s: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn parse_sexp(tokens: &[String], pos: &mut usize) -> Result<Sexp, ParseError> {
    if *pos >= tokens.len() {
        return Err(ParseError::Syntax("unexpected end of input".into()));
    }
    let t = &tokens[*pos];
    *pos += 1;
    if t == "(" {
        let mut items = Vec::new();
        while *pos < tokens.len() && tokens[*pos] != ")" {
            items.push(parse_sexp(tokens, pos)?);
        }
        if *pos >= tokens.len() {
            return Err(ParseError::Syntax("missing closing parenthesis".into()));
        }
        *pos += 1;
        Ok(Sexp::List(items))
    } else if t == ")" {
        Err(ParseError::Syntax("unexpected `)`".into()))
    } else {
        Ok(Sexp::Sym(t.clone()))
    }
}

fn affine_of(s: &Sexp) -> Result<Affine, ParseError> {
    match s {
        Sexp::Sym(tok) => {
            if tok.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '-' || c == '+') {
                rat_from_decimal(tok)
                    .map(Affine::constant)
                    .ok_or_else(|| ParseError::Syntax(format!("bad numeral `{tok}`")))
            } else {
                Ok(Affine::var(tok))
            }
        }
        Sexp::List(items) => {
            let Some(Sexp::Sym(head)) = items.first() else {
                return Err(ParseError::Syntax("expected operator".into()));
            };
            match head.as_str() {
                "+" => {
                    let mut acc = Affine::default();
                    for it in &items[1..] {
                        acc = acc.add(&affine_of(it)?);
                    }
                    Ok(acc)
                }
                "-" => {
                    if items.len() == 2 {
                        return Ok(affine_of(&items[1])?.scale(&-Rat::one()));
                    }
                    let mut acc = affine_of(&items[1])?;
                    for it in &items[2..] {
                        acc = acc.sub(&affine_of(it)?);
                    }
                    Ok(acc)
                }
                "*" => {
                    if items.len() != 3 {
                        return Err(ParseError::Syntax("`*` takes two operands".into()));
                    }
                    let a = affine_of(&items[1])?;
                    let b = affine_of(&items[2])?;
                    if a.coeffs.is_empty() {
                        Ok(b.scale(&a.constant))
                    } else if b.coeffs.is_empty() {
                        Ok(a.scale(&b.constant))
                    } else {
                        Err(ParseError::Syntax("nonlinear product".into()))
                    }
                }
                other => Err(ParseError::Syntax(format!("unknown arithmetic operator `{other}`"))),
            }
        }
    }
}

fn pred_of(s: &Sexp, negated: bool) -> Result<Pred, ParseError> {
    match s {
        Sexp::Sym(tok) => match tok.as_str() {
            "true" => Ok(if negated { Pred::False } else { Pred::True }),
            "false" => Ok(if negated { Pred::True } else { Pred::False }),
            name => Ok(Pred::bool_var(name, !negated)),
        },
        Sexp::List(items) => {
            let Some(Sexp::Sym(head)) = items.first() else {
                return Err(ParseError::Syntax("expected predicate operator".into()));
            };
            match head.as_str() {
                "and" => {
                    let ps = items[1..]
                        .iter()
                        .map(|it| pred_of(it, negated))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(if negated { Pred::or(ps) } else { Pred::and(ps) })
                }
                "or" => {
                    let ps = items[1..]
                        .iter()
                        .map(|it| pred_of(it, negated))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(if negated { Pred::and(ps) } else { Pred::or(ps) })
                }
                "not" => {
                    if items.len() != 2 {
                        return Err(ParseError::Syntax("`not` takes one operand".into()));
                    }
                    pred_of(&items[1], !negated)
                }
                op @ ("<" | "<=" | "=" | ">=" | ">") => {
                    if items.len() != 3 {
                        return Err(ParseError::Syntax(format!("`{op}` takes two operands")));
                    }
                    let lhs = affine_of(&items[1])?;
                    let rhs = affine_of(&items[2])?;
                    let op = match op {
                        "<" => CmpOp::Lt,
                        "<=" => CmpOp::Le,
                        "=" => CmpOp::Eq,
                        ">=" => CmpOp::Ge,
                        ">" => CmpOp::Gt,
                        _ => unreachable!(),
                    };
                    let p = Pred::cmp(lhs, op, rhs);
                    Ok(if negated { p.negate() } else { p })
                }
                other => Err(ParseError::Syntax(format!("unknown operator `{other}`"))),
            }
        }
    }
}

pub fn parse_pred(input: &str) -> Result<Pred, ParseError> {
    let tokens = tokenize(input);
    let mut pos = 0;
    let sexp = parse_sexp(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(ParseError::Syntax("trailing input after predicate".into()));
    }
    pred_of(&sexp, false)
}

fn affine_to_sexp(a: &Affine) -> String {
    let mut terms: Vec<String> = Vec::new();
    for (v, c) in &a.coeffs {
        if c.is_one() {
            terms.push(v.clone());
        } else {
            terms.push(format!("(* {} {})", rat_to_string(c), v));
        }
    }
    if !a.constant.is_zero() || terms.is_empty() {
        terms.push(rat_to_string(&a.constant));
    }
    if terms.len() == 1 {
        terms.pop().unwrap()
    } else {
        format!("(+ {})", terms.join(" "))
    }
}

fn lit_to_string(atom: &Atom, positive: bool) -> String {
    match atom {
        Atom::BoolVar(v) => {
            if positive {
                v.clone()
            } else {
                format!("(not {v})")
            }
        }
        Atom::Cmp { expr, rel } => {
            let e = affine_to_sexp(expr);
            match (rel, positive) {
                (Rel::Lt, true) => format!("(< {e} 0)"),
                (Rel::Lt, false) => format!("(>= {e} 0)"),
                (Rel::Le, true) => format!("(<= {e} 0)"),
                (Rel::Le, false) => format!("(> {e} 0)"),
                (Rel::Eq, true) => format!("(= {e} 0)"),
                (Rel::Eq, false) => format!("(not (= {e} 0))"),
            }
        }
    }
}

impl fmt::Display for Pred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pred::True => write!(f, "true"),
            Pred::False => write!(f, "false"),
            Pred::Lit { atom, positive } => write!(f, "{}", lit_to_string(atom, *positive)),
            Pred::And(ps) => {
                write!(f, "(and")?;
                for p in ps {
                    write!(f, " {p}")?;
                }
                write!(f, ")")
            }
            Pred::Or(ps) => {
                write!(f, "(or")?;
                for p in ps {
                    write!(f, " {p}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_decls() -> Decls {
        crate::train::controller_decls()
    }

    fn p(s: &str) -> Pred {
        parse_pred(s).unwrap()
    }

    const C5: &str =
        "(and pwr (not omega) (> (- xB x) 0.6) (> (- xB xStop) 200) (>= c 0.9) (> v 0) (< v 1))";
    const C9: &str =
        "(and pwr (not omega) (> (- xB x) 0.6) (> (- xB xStop) 200) (>= c 0.9) (> v 22))";
    const C27: &str =
        "(and pwr (not omega) (<= (- xB x) 0.6) (<= (- xB xStop) 0) (= v 0))";

    #[test]
    fn evaluate_boolean_atom() {
        let mut u = Valuation::new();
        u.insert("pwr".into(), Value::Bool(false));
        u.insert("omega".into(), Value::Bool(true));
        let c1 = p("(not pwr)");
        assert_eq!(c1.evaluate(&u), Ok(true));
    }

    #[test]
    fn evaluate_published_first_test_step() {
        let mut u = Valuation::new();
        u.insert("pwr".into(), Value::Bool(true));
        u.insert("omega".into(), Value::Bool(false));
        u.insert("xB".into(), Value::Num(rat_int(0)));
        u.insert("x".into(), Value::Num(rat_int(0)));
        u.insert("xStop".into(), Value::Num(rat_int(0)));
        u.insert("v".into(), Value::Num(rat_int(0)));
        assert_eq!(p(C27).evaluate(&u), Ok(true));
    }

    #[test]
    fn boundary_is_strict() {
        let mut u = Valuation::new();
        u.insert("xB".into(), Value::Num(rat(6, 10)));
        u.insert("x".into(), Value::Num(rat_int(0)));
        let q = p("(> (- xB x) 0.6)");
        assert_eq!(q.evaluate(&u), Ok(false));
    }

    #[test]
    fn evaluate_unbound_variable_errors() {
        let u = Valuation::new();
        let q = p("(> v 1)");
        assert_eq!(q.evaluate(&u), Err(EvalError::Unbound("v".into())));
    }

    #[test]
    fn satisfiable_simple() {
        let d = train_decls();
        assert!(is_satisfiable(&p("(not pwr)"), &d));
        assert!(!is_satisfiable(&p("(and pwr (not pwr))"), &d));
        assert!(!is_satisfiable(&p("(and (> (- xB x) 0.6) (<= (- xB x) 0.6))"), &d));
    }

    #[test]
    fn satisfiable_respects_bounds() {
        let d = train_decls();
        assert!(!is_satisfiable(&p("(> c 2)"), &d));
        assert!(is_satisfiable(&p("(>= c 0.9)"), &d));
    }

    #[test]
    fn find_model_c27_family() {
        let d = train_decls();
        let c27 = p(C27);
        let u = find_model(&c27, &d).expect("c27 satisfiable");
        assert_eq!(c27.evaluate(&u), Ok(true));
        assert_eq!(u.get("pwr"), Some(&Value::Bool(true)));
        assert_eq!(u.get("omega"), Some(&Value::Bool(false)));
        assert_eq!(u.get("v"), Some(&Value::Num(rat_int(0))));
    }

    #[test]
    fn find_model_unsat_is_none() {
        let d = train_decls();
        assert_eq!(find_model(&p("(and pwr (not pwr))"), &d), None);
    }

    #[test]
    fn find_model_c5_witness_checked_by_evaluate() {
        let d = train_decls();
        let c5 = p(C5);
        let u = find_model(&c5, &d).expect("c5 satisfiable");
        assert_eq!(c5.evaluate(&u), Ok(true));
        let v = u.get("v").unwrap().as_num().unwrap();
        assert!(v > &rat_int(0) && v < &rat_int(1));
    }

    #[test]
    fn implies_examples() {
        let d = train_decls();
        let c9 = p(C9);
        assert!(implies(&c9, &p("pwr"), &d));
        let c5 = p(C5);
        assert!(!implies(&c5, &c9, &d));
        let w = find_model(&Pred::and(vec![c5.clone(), c9.negate()]), &d).unwrap();
        assert_eq!(c5.evaluate(&w), Ok(true));
        assert_eq!(c9.evaluate(&w), Ok(false));
        assert!(implies(&c5, &c5, &d));
    }

    #[test]
    fn opposite_operators_share_atoms() {
        // (>= c 0.9) and (< c 0.9) must be complementary literals
        let a = p("(>= c 0.9)");
        let b = p("(< c 0.9)");
        assert_eq!(a.negate(), b);
        let d = train_decls();
        assert!(!is_satisfiable(&Pred::and(vec![a, b]), &d));
    }

    #[test]
    fn find_model_deterministic() {
        let d = train_decls();
        let c5 = p(C5);
        assert_eq!(find_model(&c5, &d), find_model(&c5, &d));
    }

    #[test]
    fn model_satisfies_predicate_property() {
        // invariant: evaluate(p, find_model(p)) holds for satisfiable p
        let d = train_decls();
        for s in [C5, C9, C27, "(not pwr)", "(and pwr omega (> v 0))",
                  "(or (< v 1) (> v 22))", "(and (>= v 8) (<= v 8))"] {
            let q = p(s);
            if is_satisfiable(&q, &d) {
                let u = find_model(&q, &d).expect("model exists");
                assert_eq!(q.evaluate(&u), Ok(true), "model fails for {s}");
            } else {
                assert_eq!(find_model(&q, &d), None);
            }
        }
    }

    #[test]
    fn roundtrip_parse_display() {
        let d = train_decls();
        let c5 = p(C5);
        let reparsed = parse_pred(&c5.to_string()).unwrap();
        assert!(equivalent(&c5, &reparsed, &d));
    }

    #[test]
    fn pick_decimal_prefers_coarse_values() {
        let v = pick_decimal(&Some(rat_int(0)), true, &Some(rat_int(1)), true);
        assert_eq!(v, rat(1, 2));
        let v = pick_decimal(&Some(rat_int(0)), false, &Some(rat_int(10)), false);
        assert_eq!(v, rat_int(5));
        let v = pick_decimal(&Some(rat(55, 100)), true, &Some(rat(65, 100)), true);
        assert_eq!(v, rat(6, 10));
    }

    #[test]
    fn rat_decimal_formatting() {
        assert_eq!(rat_to_string(&rat(6, 10)), "0.6");
        assert_eq!(rat_to_string(&rat_int(-3)), "-3");
        assert_eq!(rat_to_string(&rat(1, 3)), "1/3");
        assert_eq!(rat_from_decimal("0.6"), Some(rat(3, 5)));
        assert_eq!(rat_from_decimal("-1.5"), Some(rat(-3, 2)));
    }

    #[test]
    fn lifting_snaps_to_boundaries() {
        let v = rat_from_f64_lifted(21.999999999823);
        assert_eq!(v, rat_int(22));
        let v = rat_from_f64_lifted(0.1);
        assert_eq!(v, rat(1, 10));
    }
}
