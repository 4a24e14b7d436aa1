use std::rc::Rc;

use crate::address::Destination;
use crate::mailbox::Timeout;
use crate::runtime::{ClauseDb, Ctx};
use crate::term::{fresh_copy, Bindings, Mark, Term};

use super::{query_all, RemoteStream};

/// Remaining goals, shared between a choice point and the live branch.
enum Goals {
    Nil,
    Cons(Term, Rc<Goals>),
}

fn push(goal: Term, rest: Rc<Goals>) -> Rc<Goals> {
    Rc::new(Goals::Cons(goal, rest))
}

enum Alt {
    Clauses(std::vec::IntoIter<(Term, Term)>),
    Answers(std::vec::IntoIter<Term>),
    Stream(RemoteStream),
}

struct ChoicePoint {
    mark: Mark,
    goal: Term,
    cont: Rc<Goals>,
    alt: Alt,
}

/// Depth-first, left-to-right resolution over a clause database, one
/// solution per call to [`next`](Solver::next).
///
/// Remote goals `G ? S` and `G ?? S` need a thread to talk through; without
/// one they fail with a warning.
pub struct Solver<'a> {
    db: &'a ClauseDb,
    query: Term,
    bindings: Bindings,
    goals: Rc<Goals>,
    choices: Vec<ChoicePoint>,
    started: bool,
    done: bool,
    timeout: Timeout,
}

impl<'a> Solver<'a> {
    pub fn new(db: &'a ClauseDb, query: &Term) -> Solver<'a> {
        Solver {
            db,
            query: query.clone(),
            bindings: Bindings::new(),
            goals: push(query.clone(), Rc::new(Goals::Nil)),
            choices: Vec::new(),
            started: false,
            done: false,
            timeout: Timeout::Block,
        }
    }

    /// Bounds each wait on a remote server.
    pub fn remote_timeout(mut self, timeout: Timeout) -> Self {
        self.timeout = timeout;
        self
    }

    /// The query instantiated by the next solution, or `None` once the
    /// search space is exhausted.
    pub fn next(&mut self, mut remote: Option<&mut Ctx>) -> Option<Term> {
        if self.done {
            return None;
        }
        if self.started && !self.backtrack(&mut remote) {
            self.done = true;
            return None;
        }
        self.started = true;
        loop {
            let goals = self.goals.clone();
            let ok = match &*goals {
                Goals::Nil => return Some(self.bindings.resolve(&self.query)),
                Goals::Cons(g, rest) => self.step(g, rest, &mut remote),
            };
            if !ok && !self.backtrack(&mut remote) {
                self.done = true;
                return None;
            }
        }
    }

    fn backtrack(&mut self, remote: &mut Option<&mut Ctx>) -> bool {
        while let Some(cp) = self.choices.pop() {
            if self.resume(cp, remote) {
                return true;
            }
        }
        false
    }

    /// Tries the next alternative of `cp`, keeping it if it succeeds.
    fn resume(&mut self, mut cp: ChoicePoint, remote: &mut Option<&mut Ctx>) -> bool {
        self.bindings.undo_to(cp.mark);
        let next = match &mut cp.alt {
            Alt::Clauses(it) => loop {
                let Some((head, body)) = it.next() else { break None };
                if self.bindings.unify(&cp.goal, &head) {
                    break Some(if body.as_atom() == Some("true") {
                        cp.cont.clone()
                    } else {
                        push(body, cp.cont.clone())
                    });
                }
            },
            Alt::Answers(it) => loop {
                let Some(ans) = it.next() else { break None };
                if self.bindings.unify(&cp.goal, &fresh_copy(&ans)) {
                    break Some(cp.cont.clone());
                }
            },
            Alt::Stream(s) => {
                let Some(ctx) = remote.as_deref_mut() else { return false };
                loop {
                    match s.next_answer(ctx) {
                        Ok(Some(ans)) if self.bindings.unify(&cp.goal, &fresh_copy(&ans)) => {
                            break Some(cp.cont.clone())
                        }
                        Ok(Some(_)) => {}
                        Ok(None) => break None,
                        Err(e) => {
                            log::warn!(target: "query", "event=stream_failed error={e}");
                            break None;
                        }
                    }
                }
            }
        };
        match next {
            Some(goals) => {
                self.goals = goals;
                self.choices.push(cp);
                true
            }
            None => false,
        }
    }

    fn step(&mut self, goal: &Term, rest: &Rc<Goals>, remote: &mut Option<&mut Ctx>) -> bool {
        let g = self.bindings.deref(goal).clone();
        let Some((name, arity)) = g.functor() else {
            log::warn!(target: "query", "event=bad_goal goal={}", self.bindings.resolve(&g));
            return false;
        };
        let args = g.args();
        let cont = |s: &mut Self, goals: Rc<Goals>| {
            s.goals = goals;
            true
        };
        match (name, arity) {
            ("true", 0) => cont(self, rest.clone()),
            ("fail" | "false", 0) => false,
            (",", 2) => cont(self, push(args[0].clone(), push(args[1].clone(), rest.clone()))),
            ("=", 2) => self.bindings.unify(&args[0], &args[1]) && cont(self, rest.clone()),
            ("\\=", 2) => {
                let mark = self.bindings.mark();
                let unifies = self.bindings.unify(&args[0], &args[1]);
                self.bindings.undo_to(mark);
                !unifies && cont(self, rest.clone())
            }
            ("==", 2) | ("\\==", 2) => {
                let same = self.bindings.resolve(&args[0]) == self.bindings.resolve(&args[1]);
                same == (name == "==") && cont(self, rest.clone())
            }
            ("<" | ">" | "=<" | ">=" | "=:=" | "=\\=", 2) => {
                let (a, b) = (self.bindings.resolve(&args[0]), self.bindings.resolve(&args[1]));
                let (Some(x), Some(y)) = (a.as_int(), b.as_int()) else {
                    log::warn!(target: "query", "event=not_integer goal={}", self.bindings.resolve(&g));
                    return false;
                };
                let holds = match name {
                    "<" => x < y,
                    ">" => x > y,
                    "=<" => x <= y,
                    ">=" => x >= y,
                    "=:=" => x == y,
                    _ => x != y,
                };
                holds && cont(self, rest.clone())
            }
            ("?" | "??", 2) => self.remote(name == "??", &g, rest, remote),
            _ => {
                if !self.db.defines(name, arity) {
                    log::warn!(target: "query", "event=unknown_predicate pred={name}/{arity}");
                    return false;
                }
                let cp = ChoicePoint {
                    mark: self.bindings.mark(),
                    goal: g.clone(),
                    cont: rest.clone(),
                    alt: Alt::Clauses(self.db.clauses(&g).into_iter()),
                };
                self.resume(cp, remote)
            }
        }
    }

    fn remote(&mut self, stream: bool, g: &Term, rest: &Rc<Goals>, remote: &mut Option<&mut Ctx>) -> bool {
        let call = self.bindings.resolve(&g.args()[0]);
        let server = self.bindings.resolve(&g.args()[1]);
        let Some(ctx) = remote.as_deref_mut() else {
            log::warn!(target: "query", "event=no_remote goal={}", self.bindings.resolve(g));
            return false;
        };
        let Some(dest) = Destination::from_term(&server) else {
            log::warn!(target: "query", "event=bad_server server={server}");
            return false;
        };
        let alt = if stream {
            match RemoteStream::open(ctx, &call, &dest, self.timeout) {
                Ok(s) => Alt::Stream(s),
                Err(e) => {
                    log::warn!(target: "query", "event=remote_failed server={server} error={e}");
                    return false;
                }
            }
        } else {
            match query_all(ctx, &call, &dest, self.timeout) {
                Ok(answers) => Alt::Answers(answers.into_iter()),
                Err(e) => {
                    log::warn!(target: "query", "event=remote_failed server={server} error={e}");
                    return false;
                }
            }
        };
        let cp = ChoicePoint { mark: self.bindings.mark(), goal: g.args()[0].clone(), cont: rest.clone(), alt };
        self.resume(cp, remote)
    }
}

/// Every solution of `goal` against `db`, in order, without remote calls.
pub fn solve_all(db: &ClauseDb, goal: &Term) -> Vec<Term> {
    let mut s = Solver::new(db, goal);
    std::iter::from_fn(|| s.next(None)).collect()
}
