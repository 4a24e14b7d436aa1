use std::collections::HashMap;

use super::{Term, VarId};

/// Variable bindings for one thread, with a trail for undoing them.
///
/// A successful [`Bindings::unify`] leaves its bindings in place; a failed
/// one leaves the store exactly as it found it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bindings {
    cells: HashMap<VarId, Term>,
    trail: Vec<VarId>,
    occurs_check: bool,
}

/// The result of a standalone unification.
pub type Substitution = Bindings;

/// A trail position to undo back to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mark(usize);

/// Unifies two terms in a fresh store.
pub fn unify(a: &Term, b: &Term) -> Option<Substitution> {
    let mut s = Bindings::new();
    s.unify(a, b).then_some(s)
}

impl Bindings {
    pub fn new() -> Bindings {
        Bindings::default()
    }

    /// Unification that refuses to bind a variable to a term containing it.
    pub fn with_occurs_check() -> Bindings {
        Bindings { occurs_check: true, ..Bindings::default() }
    }

    pub fn set_occurs_check(&mut self, on: bool) {
        self.occurs_check = on;
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn mark(&self) -> Mark {
        Mark(self.trail.len())
    }

    pub fn undo_to(&mut self, mark: Mark) {
        while self.trail.len() > mark.0 {
            let id = self.trail.pop().expect("trail length checked");
            self.cells.remove(&id);
        }
    }

    /// Drops every binding.
    pub fn clear(&mut self) {
        self.undo_to(Mark(0));
    }

    pub fn lookup(&self, id: VarId) -> Option<&Term> {
        self.cells.get(&id)
    }

    /// Follows variable bindings until reaching a non-variable or an
    /// unbound variable.
    pub fn deref<'a>(&'a self, mut t: &'a Term) -> &'a Term {
        while let Term::Var(v) = t {
            match self.cells.get(&v.id) {
                Some(next) => t = next,
                None => break,
            }
        }
        t
    }

    /// The term with every bound variable replaced by its value, recursively.
    pub fn resolve(&self, t: &Term) -> Term {
        match self.deref(t) {
            Term::Compound(f, args) => Term::Compound(f.clone(), args.iter().map(|a| self.resolve(a)).collect()),
            other => other.clone(),
        }
    }

    fn bind(&mut self, id: VarId, value: Term) {
        self.cells.insert(id, value);
        self.trail.push(id);
    }

    fn occurs(&self, id: VarId, t: &Term) -> bool {
        match self.deref(t) {
            Term::Var(v) => v.id == id,
            Term::Compound(_, args) => args.iter().any(|a| self.occurs(id, a)),
            _ => false,
        }
    }

    /// Unifies `a` and `b`. On failure every binding made during the attempt
    /// is undone.
    pub fn unify(&mut self, a: &Term, b: &Term) -> bool {
        let mark = self.mark();
        if self.unify_inner(a, b) {
            true
        } else {
            self.undo_to(mark);
            false
        }
    }

    fn unify_inner(&mut self, a: &Term, b: &Term) -> bool {
        let mut stack = vec![(a.clone(), b.clone())];
        while let Some((x, y)) = stack.pop() {
            let x = self.deref(&x).clone();
            let y = self.deref(&y).clone();
            match (&x, &y) {
                (Term::Var(p), Term::Var(q)) if p.id == q.id => {}
                (Term::Var(p), _) => {
                    if self.occurs_check && self.occurs(p.id, &y) {
                        return false;
                    }
                    self.bind(p.id, y);
                }
                (_, Term::Var(q)) => {
                    if self.occurs_check && self.occurs(q.id, &x) {
                        return false;
                    }
                    self.bind(q.id, x);
                }
                (Term::Compound(f, xs), Term::Compound(g, ys)) => {
                    if f != g || xs.len() != ys.len() {
                        return false;
                    }
                    stack.extend(xs.iter().cloned().zip(ys.iter().cloned()).rev());
                }
                _ => {
                    if x != y {
                        return false;
                    }
                }
            }
        }
        true
    }
}
