//! The per-thread message buffer and its receive operations.
//!
//! Any thread may [`post`](Mailbox::post); only the owning thread receives.
//! Matching happens outside the lock against a snapshot of the entries, so
//! posters are never held up by a slow guard test.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use crate::codec::Envelope;
use crate::term::{fresh_copy, intern_named, Mark, Term, ThreadVars, VarRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timeout {
    /// Wait as long as it takes.
    Block,
    /// Never wait.
    Poll,
    After(Duration),
}

impl Timeout {
    pub fn secs(s: f64) -> Timeout {
        Timeout::After(Duration::from_secs_f64(s))
    }

    fn deadline_from(self, now: Instant) -> Deadline {
        match self {
            Timeout::Block => Deadline::Never,
            Timeout::Poll => Deadline::Now,
            Timeout::After(d) => Deadline::At(now + d),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Deadline {
    Never,
    Now,
    At(Instant),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecvOptions {
    pub timeout: Timeout,
    pub remember_names: bool,
}

impl Default for RecvOptions {
    fn default() -> Self {
        RecvOptions { timeout: Timeout::Block, remember_names: false }
    }
}

impl RecvOptions {
    /// What the high-level receive operators use.
    pub const HIGH_LEVEL: RecvOptions = RecvOptions { timeout: Timeout::Block, remember_names: true };

    pub fn with_timeout(self, timeout: Timeout) -> RecvOptions {
        RecvOptions { timeout, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RecvError {
    /// The message examined did not unify (recv_first only).
    #[error("message does not match")]
    NoMatch,
    #[error("timed out")]
    TimedOut,
    #[error("mailbox closed")]
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("message reference is stale")]
pub struct StaleRef;

/// Handle to one buffered envelope, valid until it is committed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MessageRef(u64);

/// Message, sender and reply-to patterns for a receive.
#[derive(Debug, Clone)]
pub struct Pattern {
    pub msg: Term,
    pub from: Term,
    pub reply_to: Term,
}

impl Pattern {
    /// Matches `msg` from anyone.
    pub fn new(msg: Term) -> Pattern {
        Pattern { msg, from: Term::var(), reply_to: Term::var() }
    }

    pub fn any() -> Pattern {
        Pattern::new(Term::var())
    }

    pub fn from(mut self, from: Term) -> Pattern {
        self.from = from;
        self
    }

    pub fn reply_to(mut self, reply_to: Term) -> Pattern {
        self.reply_to = reply_to;
        self
    }
}

type Entry = (u64, Arc<Envelope>);

type Test<'a> = Box<dyn FnMut(&mut ThreadVars) -> bool + 'a>;

/// One alternative of a [`Mailbox::select`].
pub struct Guard<'a> {
    pub pattern: Pattern,
    pub test: Option<Test<'a>>,
}

impl<'a> Guard<'a> {
    pub fn new(pattern: Pattern) -> Guard<'a> {
        Guard { pattern, test: None }
    }

    pub fn with_test(pattern: Pattern, test: impl FnMut(&mut ThreadVars) -> bool + 'a) -> Guard<'a> {
        Guard { pattern, test: Some(Box::new(test)) }
    }
}

/// A removed envelope, with the payload as it was unified (renamed into the
/// receiving thread's variables).
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub envelope: Envelope,
}

struct Inner {
    buffer: VecDeque<Entry>,
    next_seq: u64,
    closed: bool,
}

pub struct Mailbox {
    inner: Mutex<Inner>,
    arrived: Condvar,
}

impl Default for Mailbox {
    fn default() -> Self {
        Mailbox::new()
    }
}

impl std::fmt::Debug for Mailbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.lock();
        f.debug_struct("Mailbox").field("len", &inner.buffer.len()).field("closed", &inner.closed).finish()
    }
}

/// What has to be put back if a tentative match is abandoned.
struct Undo {
    mark: Mark,
    registry: Option<VarRegistry>,
}

impl Undo {
    fn apply(self, vars: &mut ThreadVars) {
        vars.bindings.undo_to(self.mark);
        if let Some(r) = self.registry {
            vars.registry = r;
        }
    }
}

fn attempt(env: &Envelope, pat: &Pattern, vars: &mut ThreadVars, remember: bool) -> Result<(Term, Undo), ()> {
    let undo = Undo { mark: vars.bindings.mark(), registry: remember.then(|| vars.registry.clone()) };
    let payload = if remember { intern_named(&env.payload, &mut vars.registry) } else { fresh_copy(&env.payload) };
    let b = &mut vars.bindings;
    if b.unify(&pat.msg, &payload)
        && b.unify(&pat.from, &env.sender.to_term())
        && b.unify(&pat.reply_to, &env.reply_to.to_term())
    {
        Ok((payload, undo))
    } else {
        undo.apply(vars);
        Err(())
    }
}

fn received(env: &Envelope, payload: Term) -> Received {
    Received { envelope: Envelope { payload, ..env.clone() } }
}

impl Mailbox {
    pub fn new() -> Mailbox {
        Mailbox {
            inner: Mutex::new(Inner { buffer: VecDeque::new(), next_seq: 0, closed: false }),
            arrived: Condvar::new(),
        }
    }

    /// Appends `e` and wakes the receiver. Returns false if the mailbox is
    /// closed, in which case `e` is discarded.
    pub fn post(&self, e: Envelope) -> bool {
        let mut inner = self.inner.lock();
        if inner.closed {
            return false;
        }
        let seq = inner.next_seq;
        inner.next_seq += 1;
        inner.buffer.push_back((seq, Arc::new(e)));
        drop(inner);
        self.arrived.notify_all();
        true
    }

    /// Wakes any blocked receive, which then fails with [`RecvError::Closed`].
    pub fn close(&self) {
        self.inner.lock().closed = true;
        self.arrived.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().closed
    }

    pub fn len(&self) -> usize {
        self.inner.lock().buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The buffered envelopes, oldest first.
    pub fn snapshot(&self) -> Vec<Envelope> {
        self.inner.lock().buffer.iter().map(|(_, e)| (**e).clone()).collect()
    }

    /// Buffered entries numbered `seq` or later, and the number the next
    /// post will get. A scan that gets through all of them has seen
    /// everything before that number.
    fn entries_from(&self, seq: u64) -> Result<(Vec<Entry>, u64), RecvError> {
        let inner = self.inner.lock();
        if inner.closed {
            return Err(RecvError::Closed);
        }
        Ok((inner.buffer.iter().filter(|(s, _)| *s >= seq).cloned().collect(), inner.next_seq))
    }

    fn remove(&self, seq: u64) -> Option<Arc<Envelope>> {
        let mut inner = self.inner.lock();
        let idx = inner.buffer.iter().position(|(s, _)| *s == seq)?;
        inner.buffer.remove(idx).map(|(_, e)| e)
    }

    /// Blocks until some entry with sequence number `>= seq` has been
    /// posted.
    fn wait_for(&self, seq: u64, deadline: Deadline) -> Result<(), RecvError> {
        let mut inner = self.inner.lock();
        loop {
            if inner.closed {
                return Err(RecvError::Closed);
            }
            if inner.next_seq > seq {
                return Ok(());
            }
            match deadline {
                Deadline::Now => return Err(RecvError::TimedOut),
                Deadline::Never => self.arrived.wait(&mut inner),
                Deadline::At(t) => {
                    if Instant::now() >= t {
                        return Err(RecvError::TimedOut);
                    }
                    self.arrived.wait_until(&mut inner, t);
                }
            }
        }
    }

    fn front(&self) -> Result<Result<(u64, Arc<Envelope>), u64>, RecvError> {
        let inner = self.inner.lock();
        if inner.closed {
            return Err(RecvError::Closed);
        }
        Ok(inner.buffer.front().cloned().ok_or(inner.next_seq))
    }

    /// Unifies the first buffered message against `pat`. On a mismatch the
    /// message stays put and the call fails without waiting.
    pub fn recv_first(&self, pat: &Pattern, vars: &mut ThreadVars, opts: RecvOptions) -> Result<Received, RecvError> {
        let deadline = opts.timeout.deadline_from(Instant::now());
        let (seq, env) = loop {
            match self.front()? {
                Ok(front) => break front,
                Err(next) => self.wait_for(next, deadline)?,
            }
        };
        let (payload, _) = attempt(&env, pat, vars, opts.remember_names).map_err(|_| RecvError::NoMatch)?;
        self.remove(seq);
        Ok(received(&env, payload))
    }

    /// Removes the first message anywhere in the buffer that unifies with
    /// `pat`, suspending until one arrives. After a suspension only new
    /// arrivals are tested.
    pub fn recv_search(&self, pat: &Pattern, vars: &mut ThreadVars, opts: RecvOptions) -> Result<Received, RecvError> {
        let deadline = opts.timeout.deadline_from(Instant::now());
        let mut cursor = 0;
        loop {
            let (entries, end) = self.entries_from(cursor)?;
            for (seq, env) in entries {
                if let Ok((payload, _)) = attempt(&env, pat, vars, opts.remember_names) {
                    self.remove(seq);
                    return Ok(received(&env, payload));
                }
            }
            cursor = end;
            self.wait_for(cursor, deadline)?;
        }
    }

    /// Enumerates matching messages without removing them.
    pub fn peek(&self, pat: Pattern, opts: RecvOptions) -> Peek<'_> {
        Peek { mailbox: self, pat, opts, cursor: 0, deadline: None, pending: None }
    }

    pub fn commit(&self, r: MessageRef) -> Result<(), StaleRef> {
        self.remove(r.0).map(|_| ()).ok_or(StaleRef)
    }

    /// Guarded choice. Messages are scanned oldest first and each message
    /// is offered to every guard in order; the first pair whose pattern
    /// unifies and whose test passes wins and the message is removed. The
    /// bindings of the winning guard are left in `vars`.
    ///
    /// The timeout bounds the suspension that starts once the scan first
    /// reaches the end of the buffer; on expiry nothing is consumed.
    pub fn select(
        &self,
        guards: &mut [Guard<'_>],
        vars: &mut ThreadVars,
        opts: RecvOptions,
    ) -> Result<(usize, Received), RecvError> {
        let mut cursor = 0;
        let mut deadline = None;
        loop {
            let (entries, end) = self.entries_from(cursor)?;
            for (seq, env) in entries {
                for (i, g) in guards.iter_mut().enumerate() {
                    let Ok((payload, undo)) = attempt(&env, &g.pattern, vars, opts.remember_names) else {
                        continue;
                    };
                    let passed = match g.test.as_mut() {
                        Some(test) => test(vars),
                        None => true,
                    };
                    if passed {
                        self.remove(seq);
                        return Ok((i, received(&env, payload)));
                    }
                    undo.apply(vars);
                }
            }
            cursor = end;
            let d = *deadline.get_or_insert_with(|| opts.timeout.deadline_from(Instant::now()));
            self.wait_for(cursor, d)?;
        }
    }
}

/// A live enumeration over matching messages; see [`Mailbox::peek`].
pub struct Peek<'a> {
    mailbox: &'a Mailbox,
    pat: Pattern,
    opts: RecvOptions,
    cursor: u64,
    deadline: Option<Deadline>,
    pending: Option<Undo>,
}

impl Peek<'_> {
    /// The next match, undoing the bindings of the previous one first.
    /// Once the end of the buffer is reached the timeout applies, measured
    /// from that point for the rest of the enumeration.
    pub fn next(&mut self, vars: &mut ThreadVars) -> Result<(MessageRef, Received), RecvError> {
        if let Some(undo) = self.pending.take() {
            undo.apply(vars);
        }
        loop {
            let (entries, end) = self.mailbox.entries_from(self.cursor)?;
            for (seq, env) in entries {
                self.cursor = seq + 1;
                if let Ok((payload, undo)) = attempt(&env, &self.pat, vars, self.opts.remember_names) {
                    self.pending = Some(undo);
                    return Ok((MessageRef(seq), received(&env, payload)));
                }
            }
            self.cursor = end;
            let d = *self.deadline.get_or_insert_with(|| self.opts.timeout.deadline_from(Instant::now()));
            self.mailbox.wait_for(self.cursor, d)?;
        }
    }

    /// Keeps the bindings of the last match instead of undoing them on the
    /// next call or on commit.
    pub fn keep(&mut self) {
        self.pending = None;
    }
}
