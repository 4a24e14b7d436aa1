//! Terms: the payload of every message and the rows of the clause database.
//!
//! Variables are identified by a process-wide unique [`VarId`]. Their
//! bindings are not stored in the term itself but in a [`Bindings`] store
//! owned by one thread, which keeps terms immutable and cheap to share.

mod bindings;
mod names;
mod text;

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use bindings::{unify, Bindings, Mark, Substitution};
pub use names::{fresh_copy, intern_named, name_unnamed, ThreadVars, VarRegistry, GENERATED_PREFIX};
pub use text::{parse_clauses, parse_text, term_to_text, ParseError};

static NEXT_VAR: AtomicU64 = AtomicU64::new(1);

/// Identity of a variable cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(u64);

impl VarId {
    /// A cell id never handed out before in this process.
    pub fn fresh() -> VarId {
        VarId(NEXT_VAR.fetch_add(1, Ordering::Relaxed))
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}

/// A logic variable: a cell id plus an optional user-visible name.
///
/// Equality and hashing look only at the cell id.
#[derive(Clone, Debug)]
pub struct Var {
    id: VarId,
    name: Option<Arc<str>>,
}

impl Var {
    pub fn fresh() -> Var {
        Var { id: VarId::fresh(), name: None }
    }

    pub fn named(name: &str) -> Var {
        Var::with_id(VarId::fresh(), Some(name))
    }

    pub(crate) fn with_id(id: VarId, name: Option<&str>) -> Var {
        let name = name.filter(|n| !n.is_empty()).map(Arc::from);
        Var { id, name }
    }

    pub fn id(&self) -> VarId {
        self.id
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for Var {}

impl Hash for Var {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Atom(Arc<str>),
    Int(i64),
    Str(Arc<str>),
    Var(Var),
    /// Functor and arguments; never built with zero arguments.
    Compound(Arc<str>, Vec<Term>),
}

pub const NIL: &str = "[]";
pub const CONS: &str = ".";

impl Term {
    pub fn atom(name: &str) -> Term {
        Term::Atom(Arc::from(name))
    }

    pub fn int(value: i64) -> Term {
        Term::Int(value)
    }

    pub fn string(text: &str) -> Term {
        Term::Str(Arc::from(text))
    }

    /// A fresh unnamed variable.
    pub fn var() -> Term {
        Term::Var(Var::fresh())
    }

    /// A fresh variable carrying `name`.
    pub fn named_var(name: &str) -> Term {
        Term::Var(Var::named(name))
    }

    /// Builds `functor(args...)`, or the atom `functor` when `args` is empty.
    pub fn compound(functor: &str, args: Vec<Term>) -> Term {
        if args.is_empty() {
            Term::atom(functor)
        } else {
            Term::Compound(Arc::from(functor), args)
        }
    }

    pub fn nil() -> Term {
        Term::atom(NIL)
    }

    pub fn cons(head: Term, tail: Term) -> Term {
        Term::compound(CONS, vec![head, tail])
    }

    /// A proper list of `items`.
    pub fn list(items: impl IntoIterator<Item = Term, IntoIter: DoubleEndedIterator>) -> Term {
        Term::list_with_tail(items, Term::nil())
    }

    pub fn list_with_tail(items: impl IntoIterator<Item = Term, IntoIter: DoubleEndedIterator>, tail: Term) -> Term {
        items.into_iter().rev().fold(tail, |acc, item| Term::cons(item, acc))
    }

    /// Elements of a proper list, or `None` if the term is not one.
    pub fn as_list(&self) -> Option<Vec<Term>> {
        let mut items = Vec::new();
        let mut cur = self;
        loop {
            match cur {
                Term::Atom(a) if &**a == NIL => return Some(items),
                Term::Compound(f, args) if &**f == CONS && args.len() == 2 => {
                    items.push(args[0].clone());
                    cur = &args[1];
                }
                _ => return None,
            }
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Term::Atom(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Term::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&Var> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }

    /// Name and arity for atoms and compounds.
    pub fn functor(&self) -> Option<(&str, usize)> {
        match self {
            Term::Atom(a) => Some((a, 0)),
            Term::Compound(f, args) => Some((f, args.len())),
            _ => None,
        }
    }

    pub fn args(&self) -> &[Term] {
        match self {
            Term::Compound(_, args) => args,
            _ => &[],
        }
    }

    /// True when `self` is `name(...)` with `arity` arguments.
    pub fn is_functor(&self, name: &str, arity: usize) -> bool {
        self.functor() == Some((name, arity))
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Compound(_, args) => args.iter().all(Term::is_ground),
            _ => true,
        }
    }

    /// Visits every variable occurrence, left to right.
    pub fn for_each_var(&self, f: &mut impl FnMut(&Var)) {
        match self {
            Term::Var(v) => f(v),
            Term::Compound(_, args) => args.iter().for_each(|a| a.for_each_var(f)),
            _ => {}
        }
    }

    /// Distinct variables in first-occurrence order.
    pub fn vars(&self) -> Vec<Var> {
        let mut seen = Vec::<Var>::new();
        self.for_each_var(&mut |v| {
            if !seen.contains(v) {
                seen.push(v.clone());
            }
        });
        seen
    }

    /// Rebuilds the term, replacing each variable with `f(var)`.
    pub fn map_vars(&self, f: &mut impl FnMut(&Var) -> Term) -> Term {
        match self {
            Term::Var(v) => f(v),
            Term::Compound(name, args) => Term::Compound(name.clone(), args.iter().map(|a| a.map_vars(f)).collect()),
            other => other.clone(),
        }
    }

    /// Structural equality up to a consistent one-to-one renaming of
    /// variables. Sharing must match: `f(X,X)` is not a variant of `f(X,Y)`.
    pub fn is_variant(&self, other: &Term) -> bool {
        let mut fwd = HashMap::new();
        let mut back = HashMap::new();
        variant(self, other, &mut fwd, &mut back)
    }
}

fn variant(a: &Term, b: &Term, fwd: &mut HashMap<VarId, VarId>, back: &mut HashMap<VarId, VarId>) -> bool {
    match (a, b) {
        (Term::Var(x), Term::Var(y)) => {
            let f = *fwd.entry(x.id).or_insert(y.id);
            let g = *back.entry(y.id).or_insert(x.id);
            f == y.id && g == x.id
        }
        (Term::Compound(f, xs), Term::Compound(g, ys)) => {
            f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| variant(x, y, fwd, back))
        }
        (Term::Var(_), _) | (_, Term::Var(_)) => false,
        _ => a == b,
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&term_to_text(self))
    }
}

impl From<i64> for Term {
    fn from(value: i64) -> Self {
        Term::Int(value)
    }
}

impl From<Var> for Term {
    fn from(value: Var) -> Self {
        Term::Var(value)
    }
}
