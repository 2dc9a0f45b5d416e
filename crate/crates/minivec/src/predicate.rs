//! Control predicates: boolean formulas over SSA values in canonical
//! disjunctive normal form.
//!
//! Atoms are boolean SSA values. A [`Term`] is a conjunction of literals
//! with no duplicate or contradictory atoms; a [`Predicate`] is a sorted,
//! deduplicated disjunction of terms. Construction keeps the form valid;
//! simplification additionally applies constant folding, complement
//! elimination (`a | !a => true`), absorption, and exact-complement term
//! merging. Past [`TERM_CAP`] terms the minimisation step is skipped —
//! results stay correct, just possibly non-minimal.

use std::collections::BTreeSet;
use std::fmt;

/// Maximum term count that still gets full minimisation.
pub const TERM_CAP: usize = 64;

/// A boolean SSA value used as a predicate atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PredAtom(pub u32);

impl fmt::Display for PredAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub atom: PredAtom,
    pub positive: bool,
}

impl Literal {
    pub fn pos(atom: PredAtom) -> Literal {
        Literal { atom, positive: true }
    }

    pub fn neg(atom: PredAtom) -> Literal {
        Literal { atom, positive: false }
    }

    pub fn complement(self) -> Literal {
        Literal {
            atom: self.atom,
            positive: !self.positive,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.positive {
            write!(f, "!")?;
        }
        write!(f, "{}", self.atom)
    }
}

/// A conjunction of literals, sorted by atom; never contains an atom twice.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Term(Vec<Literal>);

impl Term {
    /// Build a term; `None` when contradictory (contains `a` and `!a`).
    pub fn new(mut literals: Vec<Literal>) -> Option<Term> {
        literals.sort();
        literals.dedup();
        for pair in literals.windows(2) {
            if pair[0].atom == pair[1].atom {
                return None;
            }
        }
        Some(Term(literals))
    }

    pub fn literals(&self) -> &[Literal] {
        &self.0
    }

    fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Conjunction of two terms; `None` when contradictory.
    fn and(&self, other: &Term) -> Option<Term> {
        let mut lits = self.0.clone();
        lits.extend(other.0.iter().copied());
        Term::new(lits)
    }

    /// Does `self` imply `other` (other's literals are a subset)?
    fn subsumes(&self, other: &Term) -> bool {
        other.0.iter().all(|l| self.0.contains(l))
    }

    /// If the terms differ only in one complemented literal, the merged
    /// term without it.
    fn merge_adjacent(&self, other: &Term) -> Option<Term> {
        if self.0.len() != other.0.len() {
            return None;
        }
        let mut diff = None;
        for (a, b) in self.0.iter().zip(&other.0) {
            if a == b {
                continue;
            }
            if a.atom == b.atom && a.positive != b.positive && diff.is_none() {
                diff = Some(a.atom);
            } else {
                return None;
            }
        }
        let atom = diff?;
        Some(Term(
            self.0.iter().copied().filter(|l| l.atom != atom).collect(),
        ))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "true");
        }
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " & ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// A control predicate in canonical DNF. `True` and `False` are the unique
/// constant objects.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predicate {
    True,
    False,
    Dnf(Vec<Term>),
}

impl Predicate {
    pub fn atom(a: PredAtom) -> Predicate {
        Predicate::Dnf(vec![Term(vec![Literal::pos(a)])])
    }

    pub fn not_atom(a: PredAtom) -> Predicate {
        Predicate::Dnf(vec![Term(vec![Literal::neg(a)])])
    }

    pub fn constant(b: bool) -> Predicate {
        if b {
            Predicate::True
        } else {
            Predicate::False
        }
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Predicate::True)
    }

    pub fn is_false(&self) -> bool {
        matches!(self, Predicate::False)
    }

    fn terms(&self) -> Vec<Term> {
        match self {
            Predicate::True => vec![Term(vec![])],
            Predicate::False => vec![],
            Predicate::Dnf(ts) => ts.clone(),
        }
    }

    fn from_terms(terms: Vec<Term>) -> Predicate {
        let terms = normalize(terms);
        if terms.is_empty() {
            Predicate::False
        } else if terms.iter().any(|t| t.is_empty()) {
            Predicate::True
        } else {
            Predicate::Dnf(terms)
        }
    }

    pub fn or(&self, other: &Predicate) -> Predicate {
        match (self, other) {
            (Predicate::True, _) | (_, Predicate::True) => Predicate::True,
            (Predicate::False, p) | (p, Predicate::False) => p.clone(),
            _ => {
                let mut terms = self.terms();
                terms.extend(other.terms());
                Predicate::from_terms(terms)
            }
        }
    }

    pub fn and(&self, other: &Predicate) -> Predicate {
        match (self, other) {
            (Predicate::False, _) | (_, Predicate::False) => Predicate::False,
            (Predicate::True, p) | (p, Predicate::True) => p.clone(),
            _ => {
                let mut terms = Vec::new();
                for a in self.terms() {
                    for b in other.terms() {
                        if let Some(t) = a.and(&b) {
                            terms.push(t);
                        }
                    }
                }
                Predicate::from_terms(terms)
            }
        }
    }

    pub fn negate(&self) -> Predicate {
        match self {
            Predicate::True => Predicate::False,
            Predicate::False => Predicate::True,
            Predicate::Dnf(ts) => {
                // De Morgan: AND over terms of (OR of complemented literals).
                let mut acc = Predicate::True;
                for t in ts {
                    let ored = Predicate::from_terms(
                        t.0.iter()
                            .map(|l| Term(vec![l.complement()]))
                            .collect(),
                    );
                    acc = acc.and(&ored);
                }
                acc
            }
        }
    }

    /// All atoms mentioned.
    pub fn atoms(&self) -> BTreeSet<PredAtom> {
        match self {
            Predicate::Dnf(ts) => ts
                .iter()
                .flat_map(|t| t.0.iter().map(|l| l.atom))
                .collect(),
            _ => BTreeSet::new(),
        }
    }

    /// Evaluate under an assignment.
    pub fn eval(&self, assign: &dyn Fn(PredAtom) -> bool) -> bool {
        match self {
            Predicate::True => true,
            Predicate::False => false,
            Predicate::Dnf(ts) => ts.iter().any(|t| {
                t.0.iter()
                    .all(|l| assign(l.atom) == l.positive)
            }),
        }
    }

    /// When the predicate is a single literal, return it.
    pub fn single_literal(&self) -> Option<Literal> {
        match self {
            Predicate::Dnf(ts) if ts.len() == 1 && ts[0].0.len() == 1 => Some(ts[0].0[0]),
            _ => None,
        }
    }

    /// Rewrite every atom (used when cloning loop bodies).
    pub fn map_atoms(&self, map: &dyn Fn(PredAtom) -> PredAtom) -> Predicate {
        match self {
            Predicate::Dnf(ts) => Predicate::from_terms(
                ts.iter()
                    .filter_map(|t| {
                        Term::new(
                            t.0.iter()
                                .map(|l| Literal {
                                    atom: map(l.atom),
                                    positive: l.positive,
                                })
                                .collect(),
                        )
                    })
                    .collect(),
            ),
            p => p.clone(),
        }
    }

    /// Remove one literal from a single-term predicate (used to factor a
    /// loop's entry check out of its entry predicate).
    pub fn without_literal(&self, lit: Literal) -> Predicate {
        match self {
            Predicate::Dnf(ts) if ts.len() == 1 => {
                let rest: Vec<Literal> =
                    ts[0].0.iter().copied().filter(|l| *l != lit).collect();
                Predicate::from_terms(vec![Term(rest)])
            }
            p => p.clone(),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::True => write!(f, "true"),
            Predicate::False => write!(f, "false"),
            Predicate::Dnf(ts) => {
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    if ts.len() > 1 && t.0.len() > 1 {
                        write!(f, "({t})")?;
                    } else {
                        write!(f, "{t}")?;
                    }
                }
                Ok(())
            }
        }
    }
}

/// Sort, dedup, and (below [`TERM_CAP`]) minimise by absorption and
/// exact-complement merging to a fixpoint.
fn normalize(mut terms: Vec<Term>) -> Vec<Term> {
    terms.sort();
    terms.dedup();
    if terms.len() > TERM_CAP {
        return terms;
    }
    loop {
        let mut changed = false;

        // Absorption: a term implying another is redundant. Terms are
        // already deduplicated, so subsumption here is strict.
        let mut kept: Vec<Term> = Vec::with_capacity(terms.len());
        for t in &terms {
            if terms.iter().any(|o| o != t && t.subsumes(o)) {
                changed = true;
            } else {
                kept.push(t.clone());
            }
        }
        terms = kept;

        // Merge exact-complement pairs: (A & x) | (A & !x) => A.
        'merge: for i in 0..terms.len() {
            for j in (i + 1)..terms.len() {
                if let Some(m) = terms[i].merge_adjacent(&terms[j]) {
                    terms.remove(j);
                    terms.remove(i);
                    terms.push(m);
                    changed = true;
                    break 'merge;
                }
            }
        }

        terms.sort();
        terms.dedup();
        if !changed {
            break;
        }
    }
    terms
}

/// Unsimplified boolean formulas, as assembled by the control-predicate
/// calculator before canonicalisation. Kept around so tests can compare a
/// simplified predicate against its raw truth table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PredExpr {
    Const(bool),
    Atom(PredAtom),
    Not(Box<PredExpr>),
    And(Box<PredExpr>, Box<PredExpr>),
    Or(Box<PredExpr>, Box<PredExpr>),
}

impl PredExpr {
    pub fn atoms(&self) -> BTreeSet<PredAtom> {
        match self {
            PredExpr::Const(_) => BTreeSet::new(),
            PredExpr::Atom(a) => std::iter::once(*a).collect(),
            PredExpr::Not(e) => e.atoms(),
            PredExpr::And(a, b) | PredExpr::Or(a, b) => {
                let mut s = a.atoms();
                s.extend(b.atoms());
                s
            }
        }
    }

    pub fn eval(&self, assign: &dyn Fn(PredAtom) -> bool) -> bool {
        match self {
            PredExpr::Const(b) => *b,
            PredExpr::Atom(a) => assign(*a),
            PredExpr::Not(e) => !e.eval(assign),
            PredExpr::And(a, b) => a.eval(assign) && b.eval(assign),
            PredExpr::Or(a, b) => a.eval(assign) || b.eval(assign),
        }
    }
}

/// Canonicalise a formula into DNF. The result is always truth-table
/// equivalent to the input; minimisation degrades gracefully past the
/// term cap.
pub fn simplify_predicate(expr: &PredExpr) -> Predicate {
    match expr {
        PredExpr::Const(b) => Predicate::constant(*b),
        PredExpr::Atom(a) => Predicate::atom(*a),
        PredExpr::Not(e) => simplify_predicate(e).negate(),
        PredExpr::And(a, b) => simplify_predicate(a).and(&simplify_predicate(b)),
        PredExpr::Or(a, b) => simplify_predicate(a).or(&simplify_predicate(b)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(i: u32) -> PredAtom {
        PredAtom(i)
    }

    #[test]
    fn complement_or_is_true() {
        // (!c | c) => true, the post-loop merge shape.
        let p = Predicate::not_atom(a(0)).or(&Predicate::atom(a(0)));
        assert_eq!(p, Predicate::True);
    }

    #[test]
    fn true_is_identity_for_and() {
        let p = Predicate::atom(a(1));
        assert_eq!(Predicate::True.and(&p), p);
        assert_eq!(p.and(&Predicate::True), p);
    }

    #[test]
    fn contradiction_dropped() {
        let p = Predicate::atom(a(0)).and(&Predicate::not_atom(a(0)));
        assert_eq!(p, Predicate::False);
    }

    #[test]
    fn absorption() {
        // x | (x & y) => x
        let x = Predicate::atom(a(0));
        let xy = Predicate::atom(a(0)).and(&Predicate::atom(a(1)));
        assert_eq!(x.or(&xy), x);
    }

    #[test]
    fn shared_single_object_for_equal_predicates() {
        let p1 = Predicate::atom(a(3)).and(&Predicate::atom(a(1)));
        let p2 = Predicate::atom(a(1)).and(&Predicate::atom(a(3)));
        assert_eq!(p1, p2);
    }

    fn exhaustive_equiv(expr: &PredExpr, pred: &Predicate) -> bool {
        let atoms: Vec<PredAtom> = expr.atoms().union(&pred.atoms()).copied().collect();
        assert!(atoms.len() <= 8, "truth table too large");
        for bits in 0..(1u32 << atoms.len()) {
            let assign = |at: PredAtom| {
                let idx = atoms.iter().position(|x| *x == at).unwrap();
                bits & (1 << idx) != 0
            };
            if expr.eval(&assign) != pred.eval(&assign) {
                return false;
            }
        }
        true
    }

    #[test]
    fn random_formulas_match_truth_table() {
        // Deterministic pseudo-random formula generator over 4 atoms.
        fn gen(state: &mut u64, depth: u32) -> PredExpr {
            *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let r = (*state >> 33) % if depth == 0 { 2 } else { 5 };
            match r {
                0 => PredExpr::Atom(a(((*state >> 20) % 4) as u32)),
                1 => PredExpr::Const((*state >> 17) & 1 == 1),
                2 => PredExpr::Not(Box::new(gen(state, depth - 1))),
                3 => PredExpr::And(Box::new(gen(state, depth - 1)), Box::new(gen(state, depth - 1))),
                _ => PredExpr::Or(Box::new(gen(state, depth - 1)), Box::new(gen(state, depth - 1))),
            }
        }
        let mut state = 0x9e3779b97f4a7c15u64;
        for _ in 0..500 {
            let expr = gen(&mut state, 4);
            let pred = simplify_predicate(&expr);
            assert!(exhaustive_equiv(&expr, &pred), "{expr:?} vs {pred}");
        }
    }

    #[test]
    fn simplification_is_idempotent() {
        let mut state = 0xdeadbeefu64;
        fn gen(state: &mut u64, depth: u32) -> PredExpr {
            *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let r = (*state >> 33) % if depth == 0 { 2 } else { 5 };
            match r {
                0 => PredExpr::Atom(PredAtom(((*state >> 20) % 5) as u32)),
                1 => PredExpr::Const((*state >> 17) & 1 == 1),
                2 => PredExpr::Not(Box::new(gen(state, depth - 1))),
                3 => PredExpr::And(Box::new(gen(state, depth - 1)), Box::new(gen(state, depth - 1))),
                _ => PredExpr::Or(Box::new(gen(state, depth - 1)), Box::new(gen(state, depth - 1))),
            }
        }
        for _ in 0..200 {
            let expr = gen(&mut state, 4);
            let p1 = simplify_predicate(&expr);
            // Re-simplifying the canonical form must be a no-op.
            let p2 = match &p1 {
                Predicate::Dnf(ts) => {
                    let rebuilt = ts.iter().fold(Predicate::False, |acc, t| {
                        let term = t
                            .literals()
                            .iter()
                            .fold(Predicate::True, |tacc, l| {
                                let lp = if l.positive {
                                    Predicate::atom(l.atom)
                                } else {
                                    Predicate::not_atom(l.atom)
                                };
                                tacc.and(&lp)
                            });
                        acc.or(&term)
                    });
                    rebuilt
                }
                p => p.clone(),
            };
            assert_eq!(p1, p2);
        }
    }

    #[test]
    fn cap_degrades_without_losing_equivalence() {
        // Chain of ors over many distinct 2-literal terms overflows the cap;
        // the result must still be equivalent (spot-checked by evaluation).
        let mut expr = PredExpr::Const(false);
        for i in 0..70u32 {
            let t = PredExpr::And(
                Box::new(PredExpr::Atom(a(2 * i))),
                Box::new(PredExpr::Atom(a(2 * i + 1))),
            );
            expr = PredExpr::Or(Box::new(expr), Box::new(t));
        }
        let pred = simplify_predicate(&expr);
        let Predicate::Dnf(ts) = &pred else { panic!() };
        assert_eq!(ts.len(), 70);
        // All-false assignment and one satisfied term.
        assert!(!pred.eval(&|_| false));
        assert!(pred.eval(&|at| at.0 < 2));
    }
}
