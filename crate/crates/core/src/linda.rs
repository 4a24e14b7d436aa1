//! Tuple space over the clause database.
//!
//! The server's main thread answers `connect` by forking a handler for the
//! client; the handler then serves `out`, `in`, `rd`, `inp` and `rdp`
//! requests from that client only, until `disconnect`.

use thiserror::Error;

use crate::address::{Address, Destination};
use crate::mailbox::{Pattern, RecvError};
use crate::runtime::{Choice, Ctx, Node, RuntimeError, ThreadHandle};
use crate::term::{Bindings, Term};

/// Symbol of the server's main thread.
pub const SERVER_THREAD: &str = "main_linda_thread";
/// Conventional process name of the server.
pub const SERVER_PROCESS: &str = "linda_server";

const SESSION: &str = "linda_th_addr";

#[derive(Debug, Error)]
pub enum LindaError {
    #[error("not connected to a tuple space")]
    NoSession,
    #[error("server replied with {0}")]
    BadReply(String),
    #[error(transparent)]
    Send(#[from] RuntimeError),
    #[error("waiting for the server: {0}")]
    Recv(#[from] RecvError),
}

pub type Result<T> = std::result::Result<T, LindaError>;

/// Starts the server's main thread on `node`.
pub fn start_server(node: &Node) -> std::result::Result<ThreadHandle, RuntimeError> {
    node.spawn(Some(SERVER_THREAD), serve)
}

/// The main loop: one handler per `connect`. Other messages stay buffered.
/// Returns when the mailbox is closed.
pub fn serve(ctx: &mut Ctx) {
    loop {
        let from = Term::var();
        if ctx.search(&Pattern::new(Term::atom("connect")).from(from.clone())).is_err() {
            return;
        }
        let client = Address::from_term(&ctx.vars.resolve(&from));
        ctx.vars.bindings.clear();
        let Some(client) = client else { continue };
        log::info!(target: "linda", "event=connect client={client}");
        if let Err(e) = ctx.fork_anonymous(move |h| handler(h, client)) {
            log::warn!(target: "linda", "event=fork_failed error={e}");
        }
    }
}

enum Step {
    Continue,
    Stop,
}

fn unary(f: &str, t: &Term) -> Term {
    Term::compound(f, vec![t.clone()])
}

fn reply(ctx: &mut Ctx, msg: &Term, to: &Destination) {
    if let Err(e) = ctx.send_to(msg, to) {
        log::warn!(target: "linda", "event=reply_failed to={to} error={e}");
    }
}

/// Serves one client until it disconnects.
pub fn handler(ctx: &mut Ctx, client: Address) {
    let to = Destination::To(client.clone());
    reply(ctx, &Term::atom("connected"), &to);
    let from = client.to_term();
    let pat = |f: &str, t: &Term| Pattern::new(unary(f, t)).from(from.clone());
    loop {
        let mark = ctx.vars.bindings.mark();
        let vars: Vec<Term> = (0..5).map(|_| Term::var()).collect();
        let [t_out, t_in, t_rd, t_inp, t_rdp] = [0, 1, 2, 3, 4].map(|i| vars[i].clone());
        let (to1, to2, to3, to4, to5) = (to.clone(), to.clone(), to.clone(), to.clone(), to.clone());
        let step = Choice::new()
            .on(pat("out", &t_out), move |ctx, _| {
                ctx.assert(&t_out);
                reply(ctx, &Term::atom("inserted"), &to1);
                Step::Continue
            })
            .on(pat("in", &t_in), move |ctx, _| {
                if !ctx.thread_wait(|txn, b| txn.retract(&t_in, b)) {
                    return Step::Stop;
                }
                let got = ctx.vars.resolve(&t_in);
                reply(ctx, &unary("ok", &got), &to2);
                Step::Continue
            })
            .on(pat("rd", &t_rd), move |ctx, _| {
                let body = Term::var();
                if !ctx.thread_wait(|txn, b| txn.clause(&t_rd, &body, b)) {
                    return Step::Stop;
                }
                let got = ctx.vars.resolve(&t_rd);
                reply(ctx, &unary("ok", &got), &to3);
                Step::Continue
            })
            .on(pat("inp", &t_inp), move |ctx, _| {
                let msg = if ctx.retract(&t_inp) { unary("ok", &ctx.vars.resolve(&t_inp)) } else { Term::atom("fail") };
                reply(ctx, &msg, &to4);
                Step::Continue
            })
            .on(pat("rdp", &t_rdp), move |ctx, _| {
                let msg = if ctx.clause(&t_rdp, &Term::var()) {
                    unary("ok", &ctx.vars.resolve(&t_rdp))
                } else {
                    Term::atom("fail")
                };
                reply(ctx, &msg, &to5);
                Step::Continue
            })
            .on(Pattern::new(Term::atom("disconnect")).from(from.clone()), |_, _| Step::Stop)
            .run(ctx);
        ctx.vars.bindings.undo_to(mark);
        match step {
            Ok(Step::Continue) => {}
            Ok(Step::Stop) | Err(_) => break,
        }
    }
    log::info!(target: "linda", "event=disconnect client={client}");
    ctx.exit();
}

fn session_key(ctx: &Ctx, addr: Term) -> Term {
    Term::compound(SESSION, vec![Term::int(ctx.id() as i64), addr])
}

/// The handler address remembered for this thread.
fn session(ctx: &Ctx) -> Result<Address> {
    let a = Term::var();
    let mut b = Bindings::new();
    if !ctx.node().db().clause(&session_key(ctx, a.clone()), &Term::atom("true"), &mut b) {
        return Err(LindaError::NoSession);
    }
    Address::from_term(&b.resolve(&a)).ok_or(LindaError::NoSession)
}

/// Connects this thread to the server at `server` and remembers the
/// handler it is given.
pub fn connect(ctx: &mut Ctx, server: &Destination) -> Result<Address> {
    ctx.send_to(&Term::atom("connect"), server)?;
    let a = Term::var();
    ctx.search(&Pattern::new(Term::atom("connected")).from(a.clone()))?;
    let handler = Address::from_term(&ctx.vars.resolve(&a))
        .ok_or_else(|| LindaError::BadReply(ctx.vars.resolve(&a).to_string()))?;
    let mut b = Bindings::new();
    ctx.node().db().retract(&session_key(ctx, Term::var()), &mut b);
    ctx.node().db().assert(&session_key(ctx, handler.to_term()));
    Ok(handler)
}

pub fn disconnect(ctx: &mut Ctx) -> Result<()> {
    let handler = session(ctx)?;
    ctx.send_to(&Term::atom("disconnect"), &Destination::To(handler))?;
    ctx.node().db().retract(&session_key(ctx, Term::var()), &mut Bindings::new());
    Ok(())
}

fn request(ctx: &mut Ctx, op: &str, tuple: &Term) -> Result<Address> {
    let handler = session(ctx)?;
    ctx.send_to(&unary(op, tuple), &Destination::To(handler.clone()))?;
    Ok(handler)
}

/// Adds `tuple` to the space.
pub fn out(ctx: &mut Ctx, tuple: &Term) -> Result<()> {
    let handler = request(ctx, "out", tuple)?;
    ctx.search(&Pattern::new(Term::atom("inserted")).from(handler.to_term()))?;
    Ok(())
}

fn blocking(ctx: &mut Ctx, op: &str, tuple: &Term) -> Result<Term> {
    let handler = request(ctx, op, tuple)?;
    ctx.search(&Pattern::new(unary("ok", tuple)).from(handler.to_term()))?;
    Ok(ctx.vars.resolve(tuple))
}

/// Removes a tuple matching `tuple`, waiting for one to appear. Bindings
/// are left in the thread's variables.
pub fn in_(ctx: &mut Ctx, tuple: &Term) -> Result<Term> {
    blocking(ctx, "in", tuple)
}

/// Reads a tuple matching `tuple` without removing it, waiting for one.
pub fn rd(ctx: &mut Ctx, tuple: &Term) -> Result<Term> {
    blocking(ctx, "rd", tuple)
}

fn probing(ctx: &mut Ctx, op: &str, tuple: &Term) -> Result<Option<Term>> {
    let handler = request(ctx, op, tuple)?.to_term();
    let found = Choice::new()
        .on(Pattern::new(unary("ok", tuple)).from(handler.clone()), |_, _| true)
        .on(Pattern::new(Term::atom("fail")).from(handler), |_, _| false)
        .run(ctx)?;
    Ok(found.then(|| ctx.vars.resolve(tuple)))
}

/// Non-blocking [`in_`]: `None` if nothing matches.
pub fn inp(ctx: &mut Ctx, tuple: &Term) -> Result<Option<Term>> {
    probing(ctx, "inp", tuple)
}

/// Non-blocking [`rd`].
pub fn rdp(ctx: &mut Ctx, tuple: &Term) -> Result<Option<Term>> {
    probing(ctx, "rdp", tuple)
}
