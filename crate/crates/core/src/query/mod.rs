//! Distributed queries: a query server answering `all_of` and `stream_of`
//! requests, the client calls behind `?` and `??`, and the `finish`
//! propagation that cleans up abandoned answer streams.

mod solve;

use std::collections::HashMap;

use thiserror::Error;

pub use solve::{solve_all, Solver};

use crate::address::{Address, Destination};
use crate::mailbox::{Pattern, RecvError, Timeout};
use crate::runtime::{Choice, ClauseDb, Ctx, Node, RuntimeError, ThreadHandle};
use crate::term::{parse_clauses, Bindings, ParseError, Term, Var};

/// Symbol of the server's main thread.
pub const SERVER_THREAD: &str = "query_thread";
/// Conventional process name of the server.
pub const SERVER_PROCESS: &str = "query_server";

const REMOTE_THREAD: &str = "remote_thread";
const LIVE_GENERATOR: &str = "ans_gen_thread";

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("no reply from the query server in time")]
    Timeout,
    #[error("server replied with {0}")]
    BadReply(String),
    #[error(transparent)]
    Send(#[from] RuntimeError),
    #[error("waiting for the server: {0}")]
    Recv(RecvError),
}

impl From<RecvError> for QueryError {
    fn from(e: RecvError) -> Self {
        match e {
            RecvError::TimedOut | RecvError::NoMatch => QueryError::Timeout,
            e => QueryError::Recv(e),
        }
    }
}

pub type Result<T> = std::result::Result<T, QueryError>;

fn unary(f: &str, t: &Term) -> Term {
    Term::compound(f, vec![t.clone()])
}

/// Copy of `t` whose variables are all unnamed, keeping sharing. Renamed
/// clauses reuse source names for distinct cells, which would merge on the
/// wire.
fn unnamed_copy(t: &Term) -> Term {
    let mut map: HashMap<_, Term> = HashMap::new();
    t.map_vars(&mut |v| map.entry(v.id()).or_insert_with(|| Term::Var(Var::fresh())).clone())
}

/// Loads `Head :- Body.` and `Fact.` clauses into `db`.
pub fn consult(db: &ClauseDb, text: &str) -> std::result::Result<usize, ParseError> {
    let clauses = parse_clauses(text)?;
    for c in &clauses {
        db.assert(c);
    }
    Ok(clauses.len())
}

/// Receives `msg` (which should contain `slot`) from `from`, returning the
/// resolved `slot` and leaving the thread's bindings as they were.
fn receive(ctx: &mut Ctx, msg: &Term, slot: &Term, from: &Address, timeout: Timeout) -> Result<Term> {
    let mark = ctx.vars.bindings.mark();
    let got = ctx.search_within(&Pattern::new(msg.clone()).from(from.to_term()), timeout);
    let value = ctx.vars.resolve(slot);
    ctx.vars.bindings.undo_to(mark);
    got?;
    Ok(value)
}

/// The `?` call: every answer to `call` from `server`, as instances of
/// `call` in the server's order.
pub fn query_all(ctx: &mut Ctx, call: &Term, server: &Destination, timeout: Timeout) -> Result<Vec<Term>> {
    let server = ctx.resolve_destination(server);
    let call = ctx.vars.resolve(call);
    ctx.send_to(&unary("all_of", &unnamed_copy(&call)), &Destination::To(server.clone()))?;
    let l = Term::var();
    let list = receive(ctx, &unary("answer_list", &l), &l, &server, timeout)?;
    list.as_list().ok_or_else(|| QueryError::BadReply(list.to_string()))
}

fn remote_thread(owner: u64, thread: Term) -> Term {
    Term::compound(REMOTE_THREAD, vec![Term::int(owner as i64), thread])
}

/// The client end of a `??` call. Answers arrive one per
/// [`next_answer`](RemoteStream::next_answer); while the stream is open a
/// `remote_thread(Owner, QTh)` fact records it for [`kill_orphans`].
pub struct RemoteStream {
    thread: Address,
    timeout: Timeout,
    asked: bool,
    done: bool,
}

impl RemoteStream {
    pub fn open(ctx: &mut Ctx, call: &Term, server: &Destination, timeout: Timeout) -> Result<RemoteStream> {
        let server = ctx.resolve_destination(server);
        let call = ctx.vars.resolve(call);
        ctx.send_to(&unary("stream_of", &unnamed_copy(&call)), &Destination::To(server.clone()))?;
        let q = Term::var();
        let qth = receive(ctx, &unary("query_thread_is", &q), &q, &server, timeout)?;
        let thread = Address::from_term(&qth).ok_or_else(|| QueryError::BadReply(qth.to_string()))?;
        ctx.assert(&remote_thread(ctx.id(), thread.to_term()));
        Ok(RemoteStream { thread, timeout, asked: false, done: false })
    }

    /// The server thread producing the answers.
    pub fn thread(&self) -> &Address {
        &self.thread
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// The next answer, or `None` once the server has run out.
    pub fn next_answer(&mut self, ctx: &mut Ctx) -> Result<Option<Term>> {
        if self.done {
            return Ok(None);
        }
        let to = Destination::To(self.thread.clone());
        if self.asked {
            ctx.send_to(&Term::atom("next"), &to)?;
        }
        self.asked = true;
        let from = self.thread.to_term();
        let a = Term::var();
        let mark = ctx.vars.bindings.mark();
        let a2 = a.clone();
        let mut choice = Choice::new()
            .on(Pattern::new(unary("answer_instance", &a)).from(from.clone()), move |ctx, _| {
                Ok(Some(ctx.vars.resolve(&a2)))
            })
            .on(Pattern::new(Term::atom("fail")).from(from), |_, _| Ok(None));
        match self.timeout {
            Timeout::Block => {}
            Timeout::Poll => choice = choice.after(0.0, |_| Err(QueryError::Timeout)),
            Timeout::After(d) => choice = choice.after(d.as_secs_f64(), |_| Err(QueryError::Timeout)),
        }
        let got = choice.run(ctx);
        ctx.vars.bindings.undo_to(mark);
        let got = got??;
        if got.is_none() {
            self.close(ctx);
        }
        Ok(got)
    }

    fn close(&mut self, ctx: &mut Ctx) {
        self.done = true;
        ctx.node().db().retract(&remote_thread(ctx.id(), self.thread.to_term()), &mut Bindings::new());
    }

    /// Tells the server thread to stop early.
    pub fn finish(mut self, ctx: &mut Ctx) -> Result<()> {
        if self.done {
            return Ok(());
        }
        self.close(ctx);
        ctx.send_to(&Term::atom("finish"), &Destination::To(self.thread.clone()))?;
        Ok(())
    }
}

/// Sends `finish` to every remote stream this thread has open and forgets
/// them. Returns how many there were.
pub fn kill_orphans(ctx: &mut Ctx) -> usize {
    let q = Term::var();
    let pat = remote_thread(ctx.id(), q.clone());
    let mut b = Bindings::new();
    let mut n = 0;
    while ctx.node().db().retract(&pat, &mut b) {
        let qth = b.resolve(&q);
        b.clear();
        n += 1;
        match Address::from_term(&qth) {
            Some(a) => {
                if let Err(e) = ctx.send_to(&Term::atom("finish"), &Destination::To(a)) {
                    log::warn!(target: "query", "event=finish_failed thread={qth} error={e}");
                }
            }
            None => log::warn!(target: "query", "event=bad_orphan thread={qth}"),
        }
    }
    n
}

/// Answer generator threads alive on `node`.
pub fn live_generators(node: &Node) -> usize {
    node.db().clauses(&unary(LIVE_GENERATOR, &Term::var())).len()
}

/// Remote stream entries recorded on `node`.
pub fn open_streams(node: &Node) -> usize {
    node.db().clauses(&remote_thread_any()).len()
}

fn remote_thread_any() -> Term {
    Term::compound(REMOTE_THREAD, vec![Term::var(), Term::var()])
}

/// Starts the server's main thread on `node`.
pub fn start_server(node: &Node) -> std::result::Result<ThreadHandle, RuntimeError> {
    node.spawn(Some(SERVER_THREAD), serve)
}

fn reply_dest(r: &Term) -> Option<Destination> {
    let d = Destination::from_term(r);
    if d.is_none() {
        log::warn!(target: "query", "event=bad_reply_to reply_to={r}");
    }
    d
}

/// The server loop. Returns when the mailbox is closed.
pub fn serve(ctx: &mut Ctx) {
    if let Err(e) = ctx.set_symbol(SERVER_THREAD) {
        log::error!(target: "query", "event=name_taken error={e}");
        return;
    }
    loop {
        let mark = ctx.vars.bindings.mark();
        let (c1, r1, c2, r2) = (Term::var(), Term::var(), Term::var(), Term::var());
        let got = Choice::new()
            .on(Pattern::new(unary("all_of", &c1)).reply_to(r1.clone()), |ctx, _| {
                let call = ctx.vars.resolve(&c1);
                let r = ctx.vars.resolve(&r1);
                log::info!(target: "query", "event=all_of call={call} reply_to={r}");
                let node = ctx.node().clone();
                let mut solver = Solver::new(node.db(), &call);
                let answers: Vec<Term> = std::iter::from_fn(|| solver.next(Some(ctx))).collect();
                drop(solver);
                if let Some(to) = reply_dest(&r) {
                    if let Err(e) = ctx.send_to(&unary("answer_list", &Term::list(answers)), &to) {
                        log::warn!(target: "query", "event=reply_failed error={e}");
                    }
                }
                kill_orphans(ctx);
            })
            .on(Pattern::new(unary("stream_of", &c2)).reply_to(r2.clone()), |ctx, _| {
                let call = ctx.vars.resolve(&c2);
                let r = ctx.vars.resolve(&r2);
                log::info!(target: "query", "event=stream_of call={call} reply_to={r}");
                let Some(to) = reply_dest(&r) else { return };
                let client = ctx.resolve_destination(&to);
                match ctx.fork_anonymous(move |g| ans_gen(g, call, client)) {
                    Ok(h) => {
                        if let Err(e) = ctx.send_to(&unary("query_thread_is", &h.address.to_term()), &to) {
                            log::warn!(target: "query", "event=reply_failed error={e}");
                        }
                    }
                    Err(e) => log::warn!(target: "query", "event=fork_failed error={e}"),
                }
            })
            .run(ctx);
        ctx.vars.bindings.undo_to(mark);
        if got.is_err() {
            return;
        }
    }
}

/// Produces answers to `call` for `client` one at a time, waiting for
/// `next` or `finish` from the client between them.
pub fn ans_gen(ctx: &mut Ctx, call: Term, client: Address) {
    let live = unary(LIVE_GENERATOR, &Term::int(ctx.id() as i64));
    ctx.assert(&live);
    // Hooks run last-registered first: orphans are told before the
    // generator stops counting as live.
    ctx.on_exit(move |ctx| {
        ctx.node().db().retract(&live, &mut Bindings::new());
    });
    ctx.on_exit(|ctx| {
        kill_orphans(ctx);
    });
    let to = Destination::To(client.clone());
    let from = client.to_term();
    let node = ctx.node().clone();
    let mut solver = Solver::new(node.db(), &call);
    loop {
        let Some(ans) = solver.next(Some(ctx)) else {
            if let Err(e) = ctx.send_to(&Term::atom("fail"), &to) {
                log::warn!(target: "query", "event=reply_failed error={e}");
            }
            break;
        };
        if let Err(e) = ctx.send_to(&unary("answer_instance", &ans), &to) {
            log::warn!(target: "query", "event=reply_failed error={e}");
            break;
        }
        let more = Choice::new()
            .on(Pattern::new(Term::atom("next")).from(from.clone()), |_, _| true)
            .on(Pattern::new(Term::atom("finish")).from(from.clone()), |_, _| false)
            .run(ctx);
        if more != Ok(true) {
            break;
        }
    }
    drop(solver);
    ctx.exit();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::parse_text;

    fn t(s: &str) -> Term {
        parse_text(s).unwrap()
    }

    const EDGES: &str = "edge(a,b). edge(b,c).
        path(X,Y) :- edge(X,Y).
        path(X,Y) :- edge(X,Z), path(Z,Y).";

    fn server() -> Node {
        let node = Node::local(SERVER_PROCESS, "h");
        consult(node.db(), EDGES).unwrap();
        start_server(&node).unwrap();
        node
    }

    fn srv() -> Destination {
        SERVER_THREAD.parse().unwrap()
    }

    #[test]
    fn all_of_edge() {
        let node = server();
        let mut c = node.attach(None).unwrap();
        let got = query_all(&mut c, &t("edge(a,X)"), &srv(), Timeout::secs(5.0)).unwrap();
        assert_eq!(got, vec![t("edge(a,b)")]);
        assert!(query_all(&mut c, &t("nosuch(_)"), &srv(), Timeout::secs(5.0)).unwrap().is_empty());
        node.shutdown();
    }

    #[test]
    fn stream_drained() {
        let node = server();
        let mut c = node.attach(None).unwrap();
        let mut s = RemoteStream::open(&mut c, &t("path(a,C)"), &srv(), Timeout::secs(5.0)).unwrap();
        assert_ne!(s.thread().thread, SERVER_THREAD.parse::<Address>().unwrap().thread);
        assert_eq!(open_streams(&node), 1);
        assert_eq!(s.next_answer(&mut c).unwrap(), Some(t("path(a,b)")));
        assert_eq!(s.next_answer(&mut c).unwrap(), Some(t("path(a,c)")));
        assert_eq!(s.next_answer(&mut c).unwrap(), None);
        assert_eq!(open_streams(&node), 0);
        node.shutdown();
    }

    #[test]
    fn finish_stops_the_generator() {
        let node = server();
        let mut c = node.attach(None).unwrap();
        let mut s = RemoteStream::open(&mut c, &t("path(a,C)"), &srv(), Timeout::secs(5.0)).unwrap();
        assert!(s.next_answer(&mut c).unwrap().is_some());
        assert_eq!(live_generators(&node), 1);
        s.finish(&mut c).unwrap();
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(5);
        while live_generators(&node) > 0 && std::time::Instant::now() < deadline {
            std::thread::sleep(std::time::Duration::from_millis(5));
        }
        assert_eq!(live_generators(&node), 0);
        assert_eq!(open_streams(&node), 0);
        node.shutdown();
    }

    #[test]
    fn kill_orphans_sends_finish() {
        let node = server();
        let mut c = node.attach(None).unwrap();
        let mut s = RemoteStream::open(&mut c, &t("edge(X,Y)"), &srv(), Timeout::secs(5.0)).unwrap();
        s.next_answer(&mut c).unwrap();
        drop(s);
        assert_eq!(kill_orphans(&mut c), 1);
        assert_eq!(kill_orphans(&mut c), 0);
        node.shutdown();
    }

    #[test]
    fn zero_solutions_stream() {
        let node = server();
        let mut c = node.attach(None).unwrap();
        let mut s = RemoteStream::open(&mut c, &t("edge(z,_)"), &srv(), Timeout::secs(5.0)).unwrap();
        assert_eq!(s.next_answer(&mut c).unwrap(), None);
        assert_eq!(open_streams(&node), 0);
        node.shutdown();
    }

    #[test]
    fn remote_goals_in_a_local_solve() {
        let node = server();
        let mut c = node.attach(None).unwrap();
        let local = ClauseDb::new();
        consult(&local, "hop(X,Y) :- path(X,Y) ?? query_thread.").unwrap();
        let mut s = Solver::new(&local, &t("hop(a,Y)"));
        assert_eq!(s.next(Some(&mut c)), Some(t("hop(a,b)")));
        assert_eq!(s.next(Some(&mut c)), Some(t("hop(a,c)")));
        assert_eq!(s.next(Some(&mut c)), None);
        let mut s = Solver::new(&local, &t("(edge(a,X) ? query_thread, edge(X,Y) ? query_thread)"));
        assert_eq!(s.next(Some(&mut c)), Some(t("(edge(a,b) ? query_thread, edge(b,c) ? query_thread)")));
        node.shutdown();
    }

    #[test]
    fn timeout_when_no_server() {
        let node = Node::local(SERVER_PROCESS, "h");
        let mut c = node.attach(None).unwrap();
        let _silent = node.attach(Some(SERVER_THREAD)).unwrap();
        let err = query_all(&mut c, &t("p"), &srv(), Timeout::secs(0.05)).unwrap_err();
        assert!(matches!(err, QueryError::Timeout));
    }
}
