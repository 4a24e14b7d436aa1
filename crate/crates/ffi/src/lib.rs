//! C ABI over the icomm runtime.
//!
//! Routers, nodes and thread contexts are opaque handles created by
//! `*_start`/`*_attach` functions and released by the matching `*_free`.
//! Every fallible call returns an [`IcommStatus`]; on failure
//! [`icomm_last_error`] describes what went wrong on the calling thread.
//! Terms and addresses cross the boundary as canonical text. Strings
//! returned through out-parameters are owned by the caller and released
//! with [`icomm_string_free`].
//!
//! A context belongs to the thread that uses it; handles must not be used
//! after they are freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::ptr;
use std::time::Duration;

use icomm::address::{AddressError, Destination};
use icomm::linda::{self, LindaError};
use icomm::mailbox::{Pattern, RecvError, Timeout};
use icomm::query::{self, QueryError};
use icomm::router::{Router, RouterConfig, RouterError};
use icomm::runtime::{Ctx, Node, NodeConfig, RuntimeError};
use icomm::term::{parse_text, term_to_text, ParseError, Term};
use thiserror::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcommStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not UTF-8.
    InvalidUtf8 = 2,
    /// Term text did not parse.
    Parse = 3,
    /// Address text did not parse.
    Address = 4,
    /// Send failed or the node is shut down.
    Runtime = 5,
    /// A receive or remote call timed out.
    Timeout = 6,
    /// The mailbox was closed while waiting.
    Closed = 7,
    /// A tuple space operation failed; see the message.
    Linda = 8,
    /// A remote query failed; see the message.
    Query = 9,
    /// The router could not start.
    Router = 10,
    /// A Rust panic was caught at the boundary.
    Panic = 11,
}

#[derive(Debug, Error)]
enum FfiError {
    #[error("{0} is null")]
    Null(&'static str),
    #[error("{0} is not valid UTF-8")]
    Utf8(&'static str),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Address(#[from] AddressError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Recv(#[from] RecvError),
    #[error(transparent)]
    Linda(#[from] LindaError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Router(#[from] RouterError),
}

impl FfiError {
    fn status(&self) -> IcommStatus {
        match self {
            FfiError::Null(_) => IcommStatus::NullArgument,
            FfiError::Utf8(_) => IcommStatus::InvalidUtf8,
            FfiError::Parse(_) => IcommStatus::Parse,
            FfiError::Address(_) => IcommStatus::Address,
            FfiError::Runtime(_) => IcommStatus::Runtime,
            FfiError::Recv(RecvError::Closed) => IcommStatus::Closed,
            FfiError::Recv(_) => IcommStatus::Timeout,
            FfiError::Linda(LindaError::Recv(RecvError::Closed)) => IcommStatus::Closed,
            FfiError::Linda(_) => IcommStatus::Linda,
            FfiError::Query(QueryError::Timeout) => IcommStatus::Timeout,
            FfiError::Query(_) => IcommStatus::Query,
            FfiError::Router(_) => IcommStatus::Router,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, turning errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> IcommStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IcommStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.to_string());
            e.status()
        }
        Err(p) => {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            set_last_error(format!("panic: {}", msg.unwrap_or_default()));
            IcommStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, FfiError> {
    if p.is_null() {
        return Err(FfiError::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| FfiError::Utf8(what))
}

unsafe fn opt_text<'a>(p: *const c_char, what: &'static str) -> Result<Option<&'a str>, FfiError> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, FfiError> {
    p.as_mut().ok_or(FfiError::Null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), FfiError> {
    if out.is_null() {
        return Err(FfiError::Null(what));
    }
    out.write(value);
    Ok(())
}

fn owned(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

fn term(s: &str) -> Result<Term, FfiError> {
    Ok(parse_text(s)?)
}

fn destination(s: &str) -> Result<Destination, FfiError> {
    Ok(s.parse()?)
}

/// Negative means wait forever.
fn timeout_ms(ms: i64) -> Timeout {
    if ms < 0 {
        Timeout::Block
    } else {
        Timeout::After(Duration::from_millis(ms as u64))
    }
}

/// A routing daemon.
pub struct IcommRouter(Router);

/// One process: its threads, mailboxes and clause database.
pub struct IcommNode(Node);

/// A thread's handle on its node: mailbox, variables and address.
pub struct IcommCtx(Ctx);

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn icomm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn icomm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Starts a router for `host` listening on `listen` (`host:port`; port 0
/// picks a free one).
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icomm_router_start(
    host: *const c_char,
    listen: *const c_char,
    out: *mut *mut IcommRouter,
) -> IcommStatus {
    guard(|| {
        let cfg = RouterConfig::new(text(host, "host")?, text(listen, "listen")?);
        let r = Router::start(cfg)?;
        put(out, Box::into_raw(Box::new(IcommRouter(r))), "out")
    })
}

/// The router's listening endpoint as `ip:port`.
///
/// # Safety
/// `router` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icomm_router_endpoint(router: *mut IcommRouter, out: *mut *mut c_char) -> IcommStatus {
    guard(|| {
        let r = handle(router, "router")?;
        put(out, owned(r.0.local_addr().to_string()), "out")
    })
}

/// Stops the router and frees the handle. Null is ignored.
///
/// # Safety
/// `router` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn icomm_router_free(router: *mut IcommRouter) {
    if !router.is_null() {
        let r = Box::from_raw(router);
        r.0.shutdown();
    }
}

/// Starts a node named `process` on `host`. With a null `router` the node
/// only delivers between its own threads.
///
/// # Safety
/// String arguments must be null (where allowed) or NUL-terminated; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn icomm_node_start(
    process: *const c_char,
    host: *const c_char,
    router: *const c_char,
    out: *mut *mut IcommNode,
) -> IcommStatus {
    guard(|| {
        let process = text(process, "process")?;
        let host = text(host, "host")?;
        let node = match opt_text(router, "router")? {
            Some(ep) => Node::start(NodeConfig::new(process, host).router(ep))?,
            None => Node::local(process, host),
        };
        put(out, Box::into_raw(Box::new(IcommNode(node))), "out")
    })
}

/// Shuts the node down and frees the handle. Contexts attached to it must
/// be freed separately. Null is ignored.
///
/// # Safety
/// `node` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn icomm_node_free(node: *mut IcommNode) {
    if !node.is_null() {
        let n = Box::from_raw(node);
        n.0.shutdown();
    }
}

/// Adds clauses (`Head :- Body.` or `Fact.`) to the node's database.
/// `count` receives the number added and may be null.
///
/// # Safety
/// `node` must be live; `clauses` NUL-terminated; `count` null or writable.
#[no_mangle]
pub unsafe extern "C" fn icomm_node_consult(
    node: *mut IcommNode,
    clauses: *const c_char,
    count: *mut usize,
) -> IcommStatus {
    guard(|| {
        let n = handle(node, "node")?;
        let added = query::consult(n.0.db(), text(clauses, "clauses")?)?;
        if !count.is_null() {
            count.write(added);
        }
        Ok(())
    })
}

/// Starts the tuple space server on the node.
///
/// # Safety
/// `node` must be live.
#[no_mangle]
pub unsafe extern "C" fn icomm_linda_start_server(node: *mut IcommNode) -> IcommStatus {
    guard(|| {
        linda::start_server(&handle(node, "node")?.0)?;
        Ok(())
    })
}

/// Starts the query server over the node's database.
///
/// # Safety
/// `node` must be live.
#[no_mangle]
pub unsafe extern "C" fn icomm_query_start_server(node: *mut IcommNode) -> IcommStatus {
    guard(|| {
        query::start_server(&handle(node, "node")?.0)?;
        Ok(())
    })
}

/// Registers the calling thread with the node, optionally under a symbolic
/// name.
///
/// # Safety
/// `node` must be live; `symbol` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icomm_ctx_attach(
    node: *mut IcommNode,
    symbol: *const c_char,
    out: *mut *mut IcommCtx,
) -> IcommStatus {
    guard(|| {
        let n = handle(node, "node")?;
        let ctx = n.0.attach(opt_text(symbol, "symbol")?)?;
        put(out, Box::into_raw(Box::new(IcommCtx(ctx))), "out")
    })
}

/// Deregisters the thread and frees the handle. Null is ignored.
///
/// # Safety
/// `ctx` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn icomm_ctx_free(ctx: *mut IcommCtx) {
    if !ctx.is_null() {
        drop(Box::from_raw(ctx));
    }
}

/// This thread's full address, `thread:process@host`.
///
/// # Safety
/// `ctx` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icomm_ctx_address(ctx: *mut IcommCtx, out: *mut *mut c_char) -> IcommStatus {
    guard(|| {
        let c = handle(ctx, "ctx")?;
        put(out, owned(c.0.address().to_string()), "out")
    })
}

/// Sends the term `msg` to the address `to`, sharing variable names with
/// the receiver.
///
/// # Safety
/// `ctx` must be live; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn icomm_send(ctx: *mut IcommCtx, msg: *const c_char, to: *const c_char) -> IcommStatus {
    guard(|| {
        let c = handle(ctx, "ctx")?;
        let msg = term(text(msg, "msg")?)?;
        let to = destination(text(to, "to")?)?;
        c.0.send_to(&msg, &to)?;
        Ok(())
    })
}

/// Takes the first buffered message unifying with `pattern`, waiting up to
/// `timeout_ms` (negative: forever). `out` receives the message text with
/// this thread's bindings applied; `from` (may be null) the sender.
///
/// # Safety
/// `ctx` must be live; `pattern` NUL-terminated; `out` writable; `from`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn icomm_recv(
    ctx: *mut IcommCtx,
    pattern: *const c_char,
    timeout_ms: i64,
    out: *mut *mut c_char,
    from: *mut *mut c_char,
) -> IcommStatus {
    guard(|| {
        let c = handle(ctx, "ctx")?;
        let pat = term(text(pattern, "pattern")?)?;
        if out.is_null() {
            return Err(FfiError::Null("out"));
        }
        let got = c.0.search_within(&Pattern::new(pat), self::timeout_ms(timeout_ms))?;
        let msg = c.0.vars.resolve(&got.envelope.payload);
        out.write(owned(term_to_text(&msg)));
        if !from.is_null() {
            from.write(owned(got.envelope.sender.to_string()));
        }
        Ok(())
    })
}

/// Connects this thread to the tuple space server at `server`.
///
/// # Safety
/// `ctx` must be live; `server` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn icomm_linda_connect(ctx: *mut IcommCtx, server: *const c_char) -> IcommStatus {
    guard(|| {
        let c = handle(ctx, "ctx")?;
        linda::connect(&mut c.0, &destination(text(server, "server")?)?)?;
        Ok(())
    })
}

/// # Safety
/// `ctx` must be live.
#[no_mangle]
pub unsafe extern "C" fn icomm_linda_disconnect(ctx: *mut IcommCtx) -> IcommStatus {
    guard(|| {
        linda::disconnect(&mut handle(ctx, "ctx")?.0)?;
        Ok(())
    })
}

/// # Safety
/// `ctx` must be live; `tuple` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn icomm_linda_out(ctx: *mut IcommCtx, tuple: *const c_char) -> IcommStatus {
    guard(|| {
        let c = handle(ctx, "ctx")?;
        linda::out(&mut c.0, &term(text(tuple, "tuple")?)?)?;
        Ok(())
    })
}

#[derive(Clone, Copy)]
enum Take {
    In,
    Rd,
    Inp,
    Rdp,
}

unsafe fn take(ctx: *mut IcommCtx, tuple: *const c_char, out: *mut *mut c_char, op: Take) -> IcommStatus {
    guard(|| {
        let c = handle(ctx, "ctx")?;
        let t = term(text(tuple, "tuple")?)?;
        if out.is_null() {
            return Err(FfiError::Null("out"));
        }
        let got = match op {
            Take::In => Some(linda::in_(&mut c.0, &t)?),
            Take::Rd => Some(linda::rd(&mut c.0, &t)?),
            Take::Inp => linda::inp(&mut c.0, &t)?,
            Take::Rdp => linda::rdp(&mut c.0, &t)?,
        };
        out.write(got.map_or(ptr::null_mut(), |t| owned(term_to_text(&t))));
        Ok(())
    })
}

/// Removes a matching tuple, waiting for one. `out` receives its text.
///
/// # Safety
/// `ctx` must be live; `tuple` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icomm_linda_in(
    ctx: *mut IcommCtx,
    tuple: *const c_char,
    out: *mut *mut c_char,
) -> IcommStatus {
    take(ctx, tuple, out, Take::In)
}

/// Reads a matching tuple without removing it, waiting for one.
///
/// # Safety
/// As [`icomm_linda_in`].
#[no_mangle]
pub unsafe extern "C" fn icomm_linda_rd(
    ctx: *mut IcommCtx,
    tuple: *const c_char,
    out: *mut *mut c_char,
) -> IcommStatus {
    take(ctx, tuple, out, Take::Rd)
}

/// Like [`icomm_linda_in`] but never waits; `out` is set to null when
/// nothing matches.
///
/// # Safety
/// As [`icomm_linda_in`].
#[no_mangle]
pub unsafe extern "C" fn icomm_linda_inp(
    ctx: *mut IcommCtx,
    tuple: *const c_char,
    out: *mut *mut c_char,
) -> IcommStatus {
    take(ctx, tuple, out, Take::Inp)
}

/// Like [`icomm_linda_rd`] but never waits; `out` is set to null when
/// nothing matches.
///
/// # Safety
/// As [`icomm_linda_in`].
#[no_mangle]
pub unsafe extern "C" fn icomm_linda_rdp(
    ctx: *mut IcommCtx,
    tuple: *const c_char,
    out: *mut *mut c_char,
) -> IcommStatus {
    take(ctx, tuple, out, Take::Rdp)
}

/// Every instance of `goal` proved by the query server at `server`, as the
/// text of a list.
///
/// # Safety
/// `ctx` must be live; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icomm_query_all(
    ctx: *mut IcommCtx,
    goal: *const c_char,
    server: *const c_char,
    timeout_ms: i64,
    out: *mut *mut c_char,
) -> IcommStatus {
    guard(|| {
        let c = handle(ctx, "ctx")?;
        let goal = term(text(goal, "goal")?)?;
        let server = destination(text(server, "server")?)?;
        if out.is_null() {
            return Err(FfiError::Null("out"));
        }
        let answers = query::query_all(&mut c.0, &goal, &server, self::timeout_ms(timeout_ms))?;
        out.write(owned(term_to_text(&Term::list(answers))));
        Ok(())
    })
}
