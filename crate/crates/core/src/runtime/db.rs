//! The node-wide clause store shared by all threads.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Condvar, Mutex, ReentrantMutex};

use crate::term::{fresh_copy, Bindings, Term};

type Key = (Arc<str>, usize);

fn key_of(head: &Term) -> Option<Key> {
    match head {
        Term::Atom(a) => Some((a.clone(), 0)),
        Term::Compound(f, args) => Some((f.clone(), args.len())),
        _ => None,
    }
}

/// Splits `H :- B` into its parts; anything else is a fact.
pub fn split_clause(clause: &Term) -> (Term, Term) {
    match clause {
        Term::Compound(f, args) if &**f == ":-" && args.len() == 2 => (args[0].clone(), args[1].clone()),
        _ => (clause.clone(), Term::atom("true")),
    }
}

#[derive(Debug, Default)]
struct DbState {
    preds: HashMap<Key, Vec<(Term, Term)>>,
    generation: u64,
}

/// Predicate-indexed clauses in assertion order.
///
/// Stored clauses own their variables; every lookup hands out a renamed
/// copy, so callers can bind freely in their own [`Bindings`].
#[derive(Debug, Default)]
pub struct ClauseDb {
    critical: ReentrantMutex<()>,
    state: Mutex<DbState>,
    changed: Condvar,
    shutdown: AtomicBool,
}

/// Exclusive access to the store, handed to [`ClauseDb::transaction`] and
/// [`ClauseDb::thread_wait`] bodies.
pub struct Txn<'a> {
    state: &'a mut DbState,
    dirty: bool,
}

impl Txn<'_> {
    /// Appends a clause (`H :- B` or a fact). Variables are taken as they
    /// stand in `clause`; resolve bindings first. Returns false if the head
    /// is not callable.
    pub fn assert(&mut self, clause: &Term) -> bool {
        let (head, body) = split_clause(&fresh_copy(clause));
        let Some(key) = key_of(&head) else { return false };
        self.state.preds.entry(key).or_default().push((head, body));
        self.state.generation += 1;
        self.dirty = true;
        true
    }

    /// Removes the first clause unifying with `pattern`, leaving the
    /// bindings in `b`. A bare head only matches facts.
    pub fn retract(&mut self, pattern: &Term, b: &mut Bindings) -> bool {
        let (head, body) = split_clause(&b.resolve(pattern));
        let Some(key) = key_of(&head) else { return false };
        let Some(list) = self.state.preds.get_mut(&key) else { return false };
        for i in 0..list.len() {
            let (h, bd) = rename(&list[i]);
            let mark = b.mark();
            if b.unify(&head, &h) && b.unify(&body, &bd) {
                list.remove(i);
                if list.is_empty() {
                    self.state.preds.remove(&key);
                }
                self.state.generation += 1;
                self.dirty = true;
                return true;
            }
            b.undo_to(mark);
        }
        false
    }

    /// Binds `head` and `body` against the first matching clause, without
    /// removing it.
    pub fn clause(&self, head: &Term, body: &Term, b: &mut Bindings) -> bool {
        for (h, bd) in self.clauses(&b.resolve(head)) {
            let mark = b.mark();
            if b.unify(head, &h) && b.unify(body, &bd) {
                return true;
            }
            b.undo_to(mark);
        }
        false
    }

    /// Renamed copies of every clause for the predicate of `head`.
    pub fn clauses(&self, head: &Term) -> Vec<(Term, Term)> {
        let Some(key) = key_of(head) else { return Vec::new() };
        self.state.preds.get(&key).map(|l| l.iter().map(rename).collect()).unwrap_or_default()
    }

    pub fn defines(&self, name: &str, arity: usize) -> bool {
        self.state.preds.keys().any(|(f, a)| &**f == name && *a == arity)
    }
}

fn rename((h, b): &(Term, Term)) -> (Term, Term) {
    let c = fresh_copy(&Term::compound(":-", vec![h.clone(), b.clone()]));
    (c.args()[0].clone(), c.args()[1].clone())
}

impl ClauseDb {
    pub fn new() -> ClauseDb {
        ClauseDb::default()
    }

    /// Runs `f` with the store locked. Takes the critical lock too, so it
    /// never interleaves with a [`critical`](ClauseDb::critical) section of
    /// another thread.
    pub fn transaction<R>(&self, f: impl FnOnce(&mut Txn<'_>) -> R) -> R {
        let _crit = self.critical.lock();
        let mut state = self.state.lock();
        let mut txn = Txn { state: &mut state, dirty: false };
        let r = f(&mut txn);
        let dirty = txn.dirty;
        drop(state);
        if dirty {
            self.changed.notify_all();
        }
        r
    }

    pub fn assert(&self, clause: &Term) -> bool {
        self.transaction(|t| t.assert(clause))
    }

    pub fn retract(&self, pattern: &Term, b: &mut Bindings) -> bool {
        self.transaction(|t| t.retract(pattern, b))
    }

    pub fn clause(&self, head: &Term, body: &Term, b: &mut Bindings) -> bool {
        self.transaction(|t| t.clause(head, body, b))
    }

    pub fn clauses(&self, head: &Term) -> Vec<(Term, Term)> {
        self.transaction(|t| t.clauses(head))
    }

    pub fn defines(&self, name: &str, arity: usize) -> bool {
        self.transaction(|t| t.defines(name, arity))
    }

    /// Bumped on every successful assert or retract.
    pub fn generation(&self) -> u64 {
        self.state.lock().generation
    }

    pub fn len(&self) -> usize {
        self.state.lock().preds.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs `f` under node-wide mutual exclusion. Re-entrant.
    pub fn critical<R>(&self, f: impl FnOnce() -> R) -> R {
        let _g = self.critical.lock();
        f()
    }

    /// Retries `f` each time the store changes until it returns `Some`.
    /// Each attempt runs under the store lock, so a retract inside `f` is
    /// atomic with the decision to succeed. `None` once the database shuts
    /// down.
    pub fn thread_wait<R>(&self, f: impl FnMut(&mut Txn<'_>) -> Option<R>) -> Option<R> {
        self.wait_until(f, None)
    }

    /// [`thread_wait`](ClauseDb::thread_wait) giving up at `deadline`.
    pub fn thread_wait_until<R>(&self, f: impl FnMut(&mut Txn<'_>) -> Option<R>, deadline: Instant) -> Option<R> {
        self.wait_until(f, Some(deadline))
    }

    fn wait_until<R>(&self, mut f: impl FnMut(&mut Txn<'_>) -> Option<R>, deadline: Option<Instant>) -> Option<R> {
        loop {
            if self.shutdown.load(Ordering::Acquire) {
                return None;
            }
            let seen = {
                let _crit = self.critical.lock();
                let mut state = self.state.lock();
                let mut txn = Txn { state: &mut state, dirty: false };
                let r = f(&mut txn);
                let dirty = txn.dirty;
                let generation = state.generation;
                drop(state);
                if dirty {
                    self.changed.notify_all();
                }
                if r.is_some() {
                    return r;
                }
                generation
            };
            let mut state = self.state.lock();
            while state.generation == seen && !self.shutdown.load(Ordering::Acquire) {
                match deadline {
                    None => self.changed.wait(&mut state),
                    Some(d) => {
                        if self.changed.wait_until(&mut state, d).timed_out() {
                            return None;
                        }
                    }
                }
            }
        }
    }

    /// Wakes every waiter, which then gives up.
    pub fn shutdown(&self) {
        self.shutdown.store(true, Ordering::Release);
        let _state = self.state.lock();
        self.changed.notify_all();
    }
}
