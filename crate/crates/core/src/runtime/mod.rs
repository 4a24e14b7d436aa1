//! Nodes and their threads.
//!
//! A [`Node`] is one named process on one host. Each of its threads owns a
//! [`Ctx`]: a mailbox, variable bindings and a name registry. Threads share
//! the node's [`ClauseDb`].

mod choice;
mod db;
mod link;

use std::collections::HashMap;
use std::io;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use parking_lot::Mutex;
use thiserror::Error;

use crate::address::{resolve, Address, AddressContext, Destination, ThreadRef};
use crate::codec::{decode_frame, encode_envelope, CodecError, Envelope, Flags, Frame};
use crate::mailbox::{Mailbox, Pattern, Received, RecvError, RecvOptions, Timeout};
use crate::term::{name_unnamed, Bindings, Term, ThreadVars};

pub use choice::Choice;
pub use db::{split_clause, ClauseDb, Txn};
use link::RouterLink;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("thread symbol {0:?} is already taken")]
    DuplicateSymbol(String),
    #[error("no thread {0} in this process")]
    UnknownThread(Address),
    #[error("destination is not an address: {0}")]
    BadDestination(String),
    #[error("process has no router link")]
    NoRouter,
    #[error("node is shut down")]
    Shutdown,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("router link: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = RuntimeError> = std::result::Result<T, E>;

/// How a node identifies itself and where its router listens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub process: String,
    pub host: String,
    /// `host:port` of the router; `None` for a node that only talks to
    /// itself.
    pub router: Option<String>,
}

impl NodeConfig {
    pub fn new(process: &str, host: &str) -> NodeConfig {
        NodeConfig { process: process.into(), host: host.into(), router: None }
    }

    pub fn router(mut self, endpoint: impl Into<String>) -> NodeConfig {
        self.router = Some(endpoint.into());
        self
    }
}

/// Data-frame counters for the node's router link.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub frames_out: u64,
    pub frames_in: u64,
    /// Inbound frames addressed to no live thread, or undecodable.
    pub dropped: u64,
}

struct Entry {
    id: u64,
    symbol: Mutex<Option<String>>,
    mailbox: Arc<Mailbox>,
}

#[derive(Default)]
struct Threads {
    by_id: HashMap<u64, Arc<Entry>>,
    by_name: HashMap<String, u64>,
    next_id: u64,
}

struct Shared {
    process: String,
    host: String,
    router: Option<String>,
    threads: Mutex<Threads>,
    db: ClauseDb,
    link: Mutex<Option<Arc<RouterLink>>>,
    frames_out: AtomicU64,
    frames_in: AtomicU64,
    dropped: AtomicU64,
    shut: AtomicBool,
}

/// Handle to a node; cheap to clone.
#[derive(Clone)]
pub struct Node(Arc<Shared>);

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node").field("process", &self.0.process).field("host", &self.0.host).finish()
    }
}

/// A spawned thread.
#[derive(Debug)]
pub struct ThreadHandle {
    pub id: u64,
    pub address: Address,
    join: JoinHandle<()>,
}

impl ThreadHandle {
    /// Waits for the thread to finish. Returns false if its goal panicked.
    pub fn join(self) -> bool {
        self.join.join().is_ok()
    }

    pub fn is_finished(&self) -> bool {
        self.join.is_finished()
    }
}

impl Node {
    /// Starts a node, registering with its router when one is configured.
    pub fn start(config: NodeConfig) -> Result<Node> {
        let node = Node::new(config);
        node.connect()?;
        Ok(node)
    }

    /// A node that has not contacted its router yet; see
    /// [`connect`](Node::connect). Creating threads before connecting means
    /// frames the router was holding for this process find them.
    pub fn new(config: NodeConfig) -> Node {
        log::info!(target: "runtime", "event=node_started process={} host={}", config.process, config.host);
        Node(Arc::new(Shared {
            process: config.process,
            host: config.host,
            router: config.router,
            threads: Mutex::new(Threads { next_id: 1, ..Threads::default() }),
            db: ClauseDb::new(),
            link: Mutex::new(None),
            frames_out: AtomicU64::new(0),
            frames_in: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            shut: AtomicBool::new(false),
        }))
    }

    /// Registers with the configured router and starts the inbound pump.
    /// Does nothing without a router or when already connected.
    pub fn connect(&self) -> Result<()> {
        let Some(endpoint) = &self.0.router else { return Ok(()) };
        let mut slot = self.0.link.lock();
        if slot.is_some() {
            return Ok(());
        }
        let weak: Weak<Shared> = Arc::downgrade(&self.0);
        let link = RouterLink::start(endpoint, &self.0.process, move |frame| {
            if let Some(shared) = weak.upgrade() {
                Node(shared).deliver_frame(&frame);
            }
        })?;
        *slot = Some(link);
        Ok(())
    }

    /// A node without a router.
    pub fn local(process: &str, host: &str) -> Node {
        Node::start(NodeConfig::new(process, host)).expect("no router, no I/O")
    }

    pub fn process(&self) -> &str {
        &self.0.process
    }

    pub fn host(&self) -> &str {
        &self.0.host
    }

    pub fn db(&self) -> &ClauseDb {
        &self.0.db
    }

    pub fn stats(&self) -> NodeStats {
        NodeStats {
            frames_out: self.0.frames_out.load(Ordering::SeqCst),
            frames_in: self.0.frames_in.load(Ordering::SeqCst),
            dropped: self.0.dropped.load(Ordering::SeqCst),
        }
    }

    /// Whether the router link is currently up.
    pub fn is_connected(&self) -> bool {
        self.0.link.lock().as_ref().is_some_and(|l| l.is_connected())
    }

    pub fn thread_count(&self) -> usize {
        self.0.threads.lock().by_id.len()
    }

    pub fn is_live(&self, thread: &ThreadRef) -> bool {
        self.lookup(thread).is_some()
    }

    /// Runs `goal` in a new top-level thread, whose creator is itself.
    pub fn spawn<F>(&self, symbol: Option<&str>, goal: F) -> Result<ThreadHandle>
    where
        F: FnOnce(&mut Ctx) + Send + 'static,
    {
        self.spawn_with_creator(symbol, None, goal)
    }

    /// Makes the calling OS thread a top-level thread of this node.
    pub fn attach(&self, symbol: Option<&str>) -> Result<Ctx> {
        let entry = self.register(symbol)?;
        Ok(Ctx::new(self.clone(), entry, None))
    }

    /// Stops the router link, wakes every blocked receive and every
    /// `thread_wait`.
    pub fn shutdown(&self) {
        if self.0.shut.swap(true, Ordering::AcqRel) {
            return;
        }
        if let Some(link) = self.0.link.lock().take() {
            link.close();
        }
        self.0.db.shutdown();
        let entries: Vec<_> = self.0.threads.lock().by_id.values().cloned().collect();
        for e in entries {
            e.mailbox.close();
        }
        log::info!(target: "runtime", "event=node_stopped process={} host={}", self.0.process, self.0.host);
    }

    pub fn is_shut_down(&self) -> bool {
        self.0.shut.load(Ordering::Acquire)
    }

    fn spawn_with_creator<F>(&self, symbol: Option<&str>, creator: Option<Address>, goal: F) -> Result<ThreadHandle>
    where
        F: FnOnce(&mut Ctx) + Send + 'static,
    {
        let entry = self.register(symbol)?;
        let node = self.clone();
        let id = entry.id;
        let address = self.address_of(&entry);
        let spawned = entry.clone();
        let join = thread::Builder::new().name(format!("{}-{id}", self.0.process)).spawn(move || {
            let mut ctx = Ctx::new(node, spawned, creator);
            goal(&mut ctx);
        });
        match join {
            Ok(join) => Ok(ThreadHandle { id, address, join }),
            Err(e) => {
                self.unregister(&entry);
                Err(e.into())
            }
        }
    }

    fn register(&self, symbol: Option<&str>) -> Result<Arc<Entry>> {
        if self.is_shut_down() {
            return Err(RuntimeError::Shutdown);
        }
        let mut t = self.0.threads.lock();
        if let Some(s) = symbol {
            if t.by_name.contains_key(s) {
                return Err(RuntimeError::DuplicateSymbol(s.to_string()));
            }
        }
        let id = t.next_id;
        t.next_id += 1;
        let entry =
            Arc::new(Entry { id, symbol: Mutex::new(symbol.map(str::to_string)), mailbox: Arc::new(Mailbox::new()) });
        if let Some(s) = symbol {
            t.by_name.insert(s.to_string(), id);
        }
        t.by_id.insert(id, entry.clone());
        Ok(entry)
    }

    fn unregister(&self, entry: &Entry) {
        let mut t = self.0.threads.lock();
        t.by_id.remove(&entry.id);
        if let Some(s) = entry.symbol.lock().as_ref() {
            if t.by_name.get(s) == Some(&entry.id) {
                t.by_name.remove(s);
            }
        }
    }

    fn lookup(&self, thread: &ThreadRef) -> Option<Arc<Entry>> {
        let t = self.0.threads.lock();
        let id = match thread {
            ThreadRef::Id(id) => *id,
            ThreadRef::Symbol(s) => *t.by_name.get(s)?,
        };
        t.by_id.get(&id).cloned()
    }

    fn address_of(&self, entry: &Entry) -> Address {
        let thread = match entry.symbol.lock().as_ref() {
            Some(s) => ThreadRef::Symbol(s.clone()),
            None => ThreadRef::Id(entry.id),
        };
        Address::new(thread, &self.0.process, &self.0.host)
    }

    fn is_local(&self, a: &Address) -> bool {
        a.process.as_deref() == Some(self.process()) && a.host.as_deref() == Some(self.host())
    }

    fn dispatch(&self, env: Envelope) -> Result<()> {
        if self.is_local(&env.to) {
            let entry = self.lookup(&env.to.thread).ok_or_else(|| RuntimeError::UnknownThread(env.to.clone()))?;
            entry.mailbox.post(env);
            return Ok(());
        }
        let frame = encode_envelope(&env)?;
        let link = self.0.link.lock().clone().ok_or(RuntimeError::NoRouter)?;
        self.0.frames_out.fetch_add(1, Ordering::SeqCst);
        log::debug!(target: "runtime", "event=send to={} payload={}", env.to, env.payload);
        link.send(frame);
        Ok(())
    }

    fn deliver_frame(&self, frame: &[u8]) {
        let env = match decode_frame(frame) {
            Ok(Frame::Data(env)) => *env,
            Ok(Frame::Control(c)) => {
                log::debug!(target: "runtime", "event=control_ignored frame={c:?}");
                return;
            }
            Err(e) => {
                self.0.dropped.fetch_add(1, Ordering::SeqCst);
                log::warn!(target: "runtime", "event=drop reason=decode error={e}");
                return;
            }
        };
        self.0.frames_in.fetch_add(1, Ordering::SeqCst);
        match self.lookup(&env.to.thread) {
            Some(entry) if self.is_local(&env.to) => {
                entry.mailbox.post(env);
            }
            _ => {
                self.0.dropped.fetch_add(1, Ordering::SeqCst);
                log::warn!(target: "runtime", "event=drop reason=unknown_thread to={} payload={}", env.to, env.payload);
            }
        }
    }
}

type Hook = Box<dyn FnOnce(&mut Ctx) + Send>;

/// One thread's view of its node.
pub struct Ctx {
    node: Node,
    entry: Arc<Entry>,
    creator: Option<Address>,
    pub vars: ThreadVars,
    hooks: Vec<Hook>,
    exited: bool,
}

impl Ctx {
    fn new(node: Node, entry: Arc<Entry>, creator: Option<Address>) -> Ctx {
        Ctx { node, entry, creator, vars: ThreadVars::new(), hooks: Vec::new(), exited: false }
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn id(&self) -> u64 {
        self.entry.id
    }

    pub fn symbol(&self) -> Option<String> {
        self.entry.symbol.lock().clone()
    }

    /// Full address, using the symbol when there is one.
    pub fn address(&self) -> Address {
        self.node.address_of(&self.entry)
    }

    pub fn creator(&self) -> Address {
        self.creator.clone().unwrap_or_else(|| self.address())
    }

    pub fn mailbox(&self) -> &Arc<Mailbox> {
        &self.entry.mailbox
    }

    pub fn address_context(&self) -> AddressContext {
        AddressContext {
            self_thread: self.address().thread,
            creator: self.creator(),
            local_process: self.node.0.process.clone(),
            local_host: self.node.0.host.clone(),
        }
    }

    /// Gives this thread a symbolic name, replacing any previous one.
    pub fn set_symbol(&mut self, name: &str) -> Result<()> {
        let mut t = self.node.0.threads.lock();
        if let Some(&owner) = t.by_name.get(name) {
            if owner == self.entry.id {
                return Ok(());
            }
            return Err(RuntimeError::DuplicateSymbol(name.to_string()));
        }
        let mut sym = self.entry.symbol.lock();
        if let Some(old) = sym.take() {
            t.by_name.remove(&old);
        }
        t.by_name.insert(name.to_string(), self.entry.id);
        *sym = Some(name.to_string());
        Ok(())
    }

    /// Forks a thread running `goal`; its creator is this thread.
    pub fn fork<F>(&self, symbol: Option<&str>, goal: F) -> Result<ThreadHandle>
    where
        F: FnOnce(&mut Ctx) + Send + 'static,
    {
        self.node.spawn_with_creator(symbol, Some(self.address()), goal)
    }

    pub fn fork_anonymous<F>(&self, goal: F) -> Result<ThreadHandle>
    where
        F: FnOnce(&mut Ctx) + Send + 'static,
    {
        self.fork(None, goal)
    }

    /// [`fork`](Ctx::fork) accepting area sizes, which have no meaning here
    /// and are ignored.
    pub fn fork_sized<F>(&self, symbol: Option<&str>, _sizes: &[usize], goal: F) -> Result<ThreadHandle>
    where
        F: FnOnce(&mut Ctx) + Send + 'static,
    {
        self.fork(symbol, goal)
    }

    pub fn resolve_destination(&self, d: &Destination) -> Address {
        resolve(d, &self.address_context())
    }

    /// Reads a destination out of a term, following this thread's bindings.
    pub fn destination(&self, t: &Term) -> Result<Destination> {
        let t = self.vars.resolve(t);
        Destination::from_term(&t).ok_or_else(|| RuntimeError::BadDestination(t.to_string()))
    }

    /// The general send. `reply_to` defaults to this thread.
    pub fn send(&mut self, msg: &Term, to: &Destination, reply_to: Option<&Destination>, flags: Flags) -> Result<()> {
        let mut payload = self.vars.resolve(msg);
        if flags.remember_names {
            payload = name_unnamed(&payload, &mut self.vars.registry);
        }
        let sender = self.address();
        let env = Envelope {
            payload,
            to: self.resolve_destination(to),
            reply_to: reply_to.map_or_else(|| sender.clone(), |r| self.resolve_destination(r)),
            sender,
            flags,
        };
        self.node.dispatch(env)
    }

    /// `Msg ->> To`.
    pub fn send_to(&mut self, msg: &Term, to: &Destination) -> Result<()> {
        self.send(msg, to, None, Flags::HIGH_LEVEL)
    }

    /// `Msg ->> To reply_to R`.
    pub fn send_reply_to(&mut self, msg: &Term, to: &Destination, reply_to: &Destination) -> Result<()> {
        self.send(msg, to, Some(reply_to), Flags::HIGH_LEVEL)
    }

    /// Tests the first buffered message only.
    pub fn recv_first(&mut self, pat: &Pattern, opts: RecvOptions) -> Result<Received, RecvError> {
        self.entry.mailbox.recv_first(pat, &mut self.vars, opts)
    }

    /// Takes the first matching message anywhere in the buffer.
    pub fn recv_search(&mut self, pat: &Pattern, opts: RecvOptions) -> Result<Received, RecvError> {
        self.entry.mailbox.recv_search(pat, &mut self.vars, opts)
    }

    /// `Msg <<- From`.
    pub fn recv(&mut self, pat: &Pattern) -> Result<Received, RecvError> {
        self.recv_first(pat, RecvOptions::HIGH_LEVEL)
    }

    /// `Msg <<= From`.
    pub fn search(&mut self, pat: &Pattern) -> Result<Received, RecvError> {
        self.recv_search(pat, RecvOptions::HIGH_LEVEL)
    }

    pub fn search_within(&mut self, pat: &Pattern, timeout: Timeout) -> Result<Received, RecvError> {
        self.recv_search(pat, RecvOptions::HIGH_LEVEL.with_timeout(timeout))
    }

    pub fn assert(&self, clause: &Term) -> bool {
        self.node.0.db.assert(&self.vars.resolve(clause))
    }

    /// Removes the first clause matching `pattern`, keeping its bindings.
    pub fn retract(&mut self, pattern: &Term) -> bool {
        self.node.0.db.retract(pattern, &mut self.vars.bindings)
    }

    pub fn clause(&mut self, head: &Term, body: &Term) -> bool {
        self.node.0.db.clause(head, body, &mut self.vars.bindings)
    }

    /// Suspends until `query` succeeds against the clause database. False
    /// only if the node shuts down first.
    pub fn thread_wait(&mut self, mut query: impl FnMut(&mut Txn<'_>, &mut Bindings) -> bool) -> bool {
        let b = &mut self.vars.bindings;
        self.node.0.db.thread_wait(|txn| query(txn, b).then_some(())).is_some()
    }

    /// [`thread_wait`](Ctx::thread_wait) bounded by `deadline`.
    pub fn thread_wait_until(
        &mut self,
        mut query: impl FnMut(&mut Txn<'_>, &mut Bindings) -> bool,
        deadline: Instant,
    ) -> bool {
        let b = &mut self.vars.bindings;
        self.node.0.db.thread_wait_until(|txn| query(txn, b).then_some(()), deadline).is_some()
    }

    /// Runs `body` under node-wide mutual exclusion.
    pub fn critical<R>(&mut self, body: impl FnOnce(&mut Ctx) -> R) -> R {
        let node = self.node.clone();
        node.0.db.critical(|| body(self))
    }

    /// Registers a hook for [`exit`](Ctx::exit); hooks run last-in first-out.
    pub fn on_exit(&mut self, hook: impl FnOnce(&mut Ctx) + Send + 'static) {
        self.hooks.push(Box::new(hook));
    }

    /// Runs the exit hooks, then removes the thread from the node. Later
    /// calls do nothing. Dropping a `Ctx` exits it.
    pub fn exit(&mut self) {
        if self.exited {
            return;
        }
        while let Some(hook) = self.hooks.pop() {
            hook(self);
        }
        self.exited = true;
        self.node.unregister(&self.entry);
        self.entry.mailbox.close();
    }

    pub fn has_exited(&self) -> bool {
        self.exited
    }
}

impl Drop for Ctx {
    fn drop(&mut self) {
        self.exit();
    }
}
