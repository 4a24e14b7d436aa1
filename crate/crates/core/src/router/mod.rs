//! The routing daemon.
//!
//! Processes connect, send REGISTER with their name and get an ack; from
//! then on the connection carries data frames both ways. Routers talk to
//! each other over connections opened with HELLO, which names the host of
//! the router that opened it.
//!
//! Frames for a local process that is down (or has never registered) wait
//! in its pending queue until it registers. Frames for another host go
//! through a per-host outbound queue. When a peer cannot be reached its
//! traffic moves to the peer's configured proxy; a router receiving traffic
//! for a third host from another router holds it until that host says
//! HELLO.

mod config;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use crate::codec::{self, decode_control, encode_control, peek_destination, read_frame, Control};

pub use config::{parse_pair, ConfigError, RouterConfig};

const BACKOFF_START: Duration = Duration::from_millis(25);
const BACKOFF_MAX: Duration = Duration::from_millis(500);
const CONNECT_TIMEOUT: Duration = Duration::from_millis(500);
const PROXY_POLL: Duration = Duration::from_millis(100);

/// Counters; all but `queued` only ever grow.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouterStats {
    pub frames_in: u64,
    pub frames_out: u64,
    pub dropped: u64,
    /// Frames currently waiting in any queue.
    pub queued: u64,
    /// Frames written per destination: `process@host` for local processes,
    /// `router@host` for other routers.
    pub hops: BTreeMap<String, u64>,
}

struct Conn {
    id: u64,
    writer: Mutex<BufWriter<TcpStream>>,
    stream: TcpStream,
    outbound: bool,
}

impl Conn {
    fn new(id: u64, stream: TcpStream, outbound: bool) -> io::Result<Arc<Conn>> {
        stream.set_nodelay(true)?;
        Ok(Arc::new(Conn { id, writer: Mutex::new(BufWriter::new(stream.try_clone()?)), stream, outbound }))
    }

    fn write(&self, frame: &[u8]) -> io::Result<()> {
        codec::write_frame(&mut *self.writer.lock(), frame)
    }

    fn close(&self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

#[derive(Default)]
struct Registration {
    live: Option<Arc<Conn>>,
    pending: VecDeque<Vec<u8>>,
    registered_at: Option<Instant>,
}

struct Queued {
    frame: Vec<u8>,
    /// Arrived from another router: wait for the host instead of redirecting
    /// or timing out.
    hold: bool,
    since: Instant,
}

struct HostQueue {
    host: String,
    frames: Mutex<VecDeque<Queued>>,
    wake: Condvar,
    worker: AtomicBool,
}

struct Shared {
    config: RouterConfig,
    procs: Mutex<HashMap<String, Registration>>,
    hosts: Mutex<HashMap<String, Arc<Conn>>>,
    queues: Mutex<HashMap<String, Arc<HostQueue>>>,
    conns: Mutex<HashMap<u64, TcpStream>>,
    next_conn: AtomicU64,
    frames_in: AtomicU64,
    frames_out: AtomicU64,
    dropped: AtomicU64,
    hops: Mutex<BTreeMap<String, u64>>,
    shutdown: AtomicBool,
    acceptor: Mutex<Option<thread::JoinHandle<()>>>,
}

/// A running router. Dropping it does not stop it; call
/// [`shutdown`](Router::shutdown).
#[derive(Clone)]
pub struct Router {
    shared: Arc<Shared>,
    addr: SocketAddr,
}

impl std::fmt::Debug for Router {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Router").field("host", &self.shared.config.host).field("addr", &self.addr).finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RouterError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot listen: {0}")]
    Io(#[from] io::Error),
}

impl Router {
    pub fn start(config: RouterConfig) -> Result<Router, RouterError> {
        config.validate()?;
        let listener = TcpListener::bind(&config.listen)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            config,
            procs: Mutex::default(),
            hosts: Mutex::default(),
            queues: Mutex::default(),
            conns: Mutex::default(),
            next_conn: AtomicU64::new(1),
            frames_in: AtomicU64::new(0),
            frames_out: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            hops: Mutex::default(),
            shutdown: AtomicBool::new(false),
            acceptor: Mutex::new(None),
        });
        let s = shared.clone();
        let acceptor =
            thread::Builder::new().name(format!("router-{}", s.config.host)).spawn(move || s.accept_loop(listener))?;
        *shared.acceptor.lock() = Some(acceptor);
        if let Some(proxy) = shared.config.proxy.clone() {
            let s = shared.clone();
            thread::Builder::new()
                .name(format!("router-{}-proxy", s.config.host))
                .spawn(move || s.keep_proxy_link(&proxy))?;
        }
        log::info!(target: "router", "event=listening host={} addr={addr}", shared.config.host);
        Ok(Router { shared, addr })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn host(&self) -> &str {
        &self.shared.config.host
    }

    pub fn stats(&self) -> RouterStats {
        let s = &self.shared;
        let pending: usize = s.procs.lock().values().map(|r| r.pending.len()).sum();
        let queued: usize = s.queues.lock().values().map(|q| q.frames.lock().len()).sum();
        RouterStats {
            frames_in: s.frames_in.load(Ordering::SeqCst),
            frames_out: s.frames_out.load(Ordering::SeqCst),
            dropped: s.dropped.load(Ordering::SeqCst),
            queued: (pending + queued) as u64,
            hops: s.hops.lock().clone(),
        }
    }

    /// Whether `process` currently has a live connection.
    pub fn registration_live(&self, process: &str) -> bool {
        self.shared.procs.lock().get(process).is_some_and(|r| r.live.is_some())
    }

    /// When `process` last registered, if it ever did.
    pub fn registered_at(&self, process: &str) -> Option<Instant> {
        self.shared.procs.lock().get(process).and_then(|r| r.registered_at)
    }

    pub fn pending(&self, process: &str) -> usize {
        self.shared.procs.lock().get(process).map_or(0, |r| r.pending.len())
    }

    /// Frames waiting to go to `host`.
    pub fn held_for(&self, host: &str) -> usize {
        self.shared.queues.lock().get(host).map_or(0, |q| q.frames.lock().len())
    }

    pub fn host_link_live(&self, host: &str) -> bool {
        self.shared.hosts.lock().contains_key(host)
    }

    /// Closes the listener and every connection. Queued frames are lost.
    /// On return the listening port is free again.
    pub fn shutdown(&self) {
        if self.shared.shutdown.swap(true, Ordering::AcqRel) {
            return;
        }
        // wake the accept loop
        let _ = TcpStream::connect_timeout(&self.addr, CONNECT_TIMEOUT);
        if let Some(acceptor) = self.shared.acceptor.lock().take() {
            let _ = acceptor.join();
        }
        for (_, s) in self.shared.conns.lock().drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
        for q in self.shared.queues.lock().values() {
            q.wake.notify_all();
        }
        log::info!(target: "router", "event=stopped host={}", self.shared.config.host);
    }

    pub fn is_shut_down(&self) -> bool {
        self.shared.shutdown.load(Ordering::Acquire)
    }
}

impl Shared {
    fn stopping(&self) -> bool {
        self.shutdown.load(Ordering::Acquire)
    }

    fn accept_loop(self: Arc<Self>, listener: TcpListener) {
        for stream in listener.incoming() {
            if self.stopping() {
                return;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!(target: "router", "event=accept_failed error={e}");
                    continue;
                }
            };
            let s = self.clone();
            let spawned =
                thread::Builder::new().name(format!("router-{}-conn", self.config.host)).spawn(move || s.serve(stream));
            if let Err(e) = spawned {
                log::warn!(target: "router", "event=spawn_failed error={e}");
            }
        }
    }

    fn track(&self, stream: &TcpStream) -> io::Result<u64> {
        let id = self.next_conn.fetch_add(1, Ordering::SeqCst);
        self.conns.lock().insert(id, stream.try_clone()?);
        if self.stopping() {
            let _ = stream.shutdown(Shutdown::Both);
        }
        Ok(id)
    }

    fn serve(self: Arc<Self>, stream: TcpStream) {
        let id = match self.track(&stream) {
            Ok(id) => id,
            Err(e) => {
                log::warn!(target: "router", "event=conn_setup_failed error={e}");
                return;
            }
        };
        let mut reader = match stream.try_clone() {
            Ok(s) => BufReader::new(s),
            Err(_) => return,
        };
        let first = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            _ => {
                self.conns.lock().remove(&id);
                return;
            }
        };
        let Ok(conn) = Conn::new(id, stream, false) else { return };
        match decode_control(&first) {
            Ok(Control::Register(name)) => self.serve_process(conn, reader, name),
            Ok(Control::Hello(host)) => self.serve_router(conn, reader, host),
            other => {
                log::warn!(target: "router", "event=bad_handshake frame={other:?}");
                conn.close();
            }
        }
        self.conns.lock().remove(&id);
    }

    fn serve_process(self: &Arc<Self>, conn: Arc<Conn>, mut reader: BufReader<TcpStream>, name: String) {
        self.register(&conn, &name);
        loop {
            match read_frame(&mut reader) {
                Ok(Some(frame)) => self.inbound(frame, false),
                Ok(None) => break,
                Err(e) => {
                    if !self.stopping() {
                        log::debug!(target: "router", "event=process_read_failed process={name} error={e}");
                    }
                    break;
                }
            }
        }
        let mut procs = self.procs.lock();
        if let Some(reg) = procs.get_mut(&name) {
            if reg.live.as_ref().is_some_and(|c| c.id == conn.id) {
                reg.live = None;
                log::info!(target: "router", "event=process_down process={name}");
            }
        }
    }

    /// Acks, flushes pending frames in order, then makes `conn` the live
    /// link, replacing any earlier one.
    fn register(&self, conn: &Arc<Conn>, name: &str) {
        let mut procs = self.procs.lock();
        let reg = procs.entry(name.to_string()).or_default();
        if conn.write(&encode_control(&Control::RegisterAck(name.to_string()))).is_err() {
            return;
        }
        if let Some(old) = reg.live.replace(conn.clone()) {
            if old.id != conn.id {
                old.close();
            }
        }
        reg.registered_at = Some(Instant::now());
        while let Some(frame) = reg.pending.front() {
            if conn.write(frame).is_err() {
                reg.live = None;
                break;
            }
            reg.pending.pop_front();
            self.count_out(&format!("{name}@{}", self.config.host));
        }
        log::info!(target: "router", "event=registered process={name} pending={}", reg.pending.len());
    }

    fn serve_router(self: &Arc<Self>, conn: Arc<Conn>, reader: BufReader<TcpStream>, host: String) {
        log::info!(target: "router", "event=hello host={host}");
        self.add_host_link(&host, conn.clone());
        self.read_router_link(conn, reader, &host);
    }

    fn add_host_link(&self, host: &str, conn: Arc<Conn>) {
        self.hosts.lock().insert(host.to_string(), conn);
        if let Some(q) = self.queues.lock().get(host) {
            q.wake.notify_all();
        }
    }

    fn read_router_link(self: &Arc<Self>, conn: Arc<Conn>, mut reader: BufReader<TcpStream>, host: &str) {
        loop {
            match read_frame(&mut reader) {
                Ok(Some(frame)) => self.inbound(frame, true),
                Ok(None) => break,
                Err(e) => {
                    if !self.stopping() {
                        log::debug!(target: "router", "event=router_read_failed host={host} error={e}");
                    }
                    break;
                }
            }
        }
        self.drop_host_link(host, &conn);
    }

    fn drop_host_link(&self, host: &str, conn: &Conn) {
        let mut hosts = self.hosts.lock();
        if hosts.get(host).is_some_and(|c| c.id == conn.id) {
            hosts.remove(host);
            log::info!(target: "router", "event=host_link_down host={host}");
        }
        conn.close();
    }

    fn count_out(&self, dest: &str) {
        self.frames_out.fetch_add(1, Ordering::SeqCst);
        *self.hops.lock().entry(dest.to_string()).or_default() += 1;
    }

    fn drop_frame(&self, why: &str, dest: &str) {
        self.dropped.fetch_add(1, Ordering::SeqCst);
        log::warn!(target: "router", "event=drop reason={why} dest={dest}");
    }

    fn inbound(self: &Arc<Self>, frame: Vec<u8>, from_router: bool) {
        let dest = match peek_destination(&frame) {
            Ok(Some(d)) => d,
            Ok(None) => return,
            Err(e) => {
                self.frames_in.fetch_add(1, Ordering::SeqCst);
                self.drop_frame(&format!("malformed({e})"), "?");
                return;
            }
        };
        self.frames_in.fetch_add(1, Ordering::SeqCst);
        let (Some(process), Some(host)) = (dest.process, dest.host) else {
            self.drop_frame("unqualified", "?");
            return;
        };
        if host == self.config.host {
            self.deliver_local(&process, frame);
        } else if from_router || self.config.peers.contains_key(&host) || self.hosts.lock().contains_key(&host) {
            self.enqueue(&host, frame, from_router);
        } else if let Some(proxy) = self.config.proxy_for.get(&host) {
            self.enqueue(proxy, frame, false);
        } else {
            self.drop_frame("unknown_host", &host);
        }
    }

    fn deliver_local(&self, process: &str, frame: Vec<u8>) {
        let mut procs = self.procs.lock();
        let reg = procs.entry(process.to_string()).or_default();
        if let Some(conn) = &reg.live {
            if conn.write(&frame).is_ok() {
                self.count_out(&format!("{process}@{}", self.config.host));
                return;
            }
            reg.live = None;
        }
        if reg.pending.len() >= self.config.queue_bound {
            reg.pending.pop_front();
            self.drop_frame("pending_overflow", process);
        }
        reg.pending.push_back(frame);
    }

    fn queue_for(&self, host: &str) -> Arc<HostQueue> {
        self.queues
            .lock()
            .entry(host.to_string())
            .or_insert_with(|| {
                Arc::new(HostQueue {
                    host: host.into(),
                    frames: Mutex::default(),
                    wake: Condvar::new(),
                    worker: AtomicBool::new(false),
                })
            })
            .clone()
    }

    fn enqueue(self: &Arc<Self>, host: &str, frame: Vec<u8>, hold: bool) {
        let q = self.queue_for(host);
        let mut frames = q.frames.lock();
        if frames.len() >= self.config.queue_bound {
            frames.pop_front();
            self.drop_frame("queue_overflow", host);
        }
        frames.push_back(Queued { frame, hold, since: Instant::now() });
        drop(frames);
        q.wake.notify_all();
        self.ensure_worker(host);
    }

    /// An existing link to `host`, or a new outbound one when `host` is a
    /// configured peer.
    fn link_to(self: &Arc<Self>, host: &str) -> Option<Arc<Conn>> {
        if let Some(c) = self.hosts.lock().get(host) {
            return Some(c.clone());
        }
        let endpoint = self.config.peers.get(host)?;
        match self.connect_peer(host, endpoint) {
            Ok(c) => Some(c),
            Err(e) => {
                log::debug!(target: "router", "event=peer_unreachable host={host} error={e}");
                None
            }
        }
    }

    fn connect_peer(self: &Arc<Self>, host: &str, endpoint: &str) -> io::Result<Arc<Conn>> {
        let addr = endpoint
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "endpoint resolves to nothing"))?;
        let stream = TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT)?;
        let id = self.track(&stream)?;
        let reader = BufReader::new(stream.try_clone()?);
        let conn = Conn::new(id, stream, true)?;
        conn.write(&encode_control(&Control::Hello(self.config.host.clone())))?;
        self.add_host_link(host, conn.clone());
        let s = self.clone();
        let c = conn.clone();
        let h = host.to_string();
        thread::Builder::new().name(format!("router-{}-peer-{host}", self.config.host)).spawn(move || {
            s.read_router_link(c, reader, &h);
            s.conns.lock().remove(&id);
        })?;
        log::info!(target: "router", "event=peer_connected host={host}");
        Ok(conn)
    }

    fn ensure_worker(self: &Arc<Self>, host: &str) {
        let q = self.queue_for(host);
        if !q.worker.swap(true, Ordering::AcqRel) {
            let s = self.clone();
            let spawned = thread::Builder::new()
                .name(format!("router-{}-out-{host}", self.config.host))
                .spawn(move || s.drain(q));
            if let Err(e) = spawned {
                log::warn!(target: "router", "event=spawn_failed error={e}");
            }
        }
    }

    /// Sends everything queued for one host, in order.
    fn drain(self: Arc<Self>, q: Arc<HostQueue>) {
        let host = q.host.clone();
        let mut backoff = BACKOFF_START;
        let mut last_used = Instant::now();
        loop {
            {
                let mut frames = q.frames.lock();
                while frames.is_empty() && !self.stopping() {
                    let idle = q.wake.wait_for(&mut frames, self.config.idle_timeout).timed_out();
                    if idle && frames.is_empty() && last_used.elapsed() >= self.config.idle_timeout {
                        self.close_idle(&host);
                    }
                }
                if self.stopping() {
                    return;
                }
            }
            match self.link_to(&host) {
                Some(conn) => {
                    backoff = BACKOFF_START;
                    last_used = Instant::now();
                    loop {
                        let front = q.frames.lock().front().map(|f| f.frame.clone());
                        let Some(frame) = front else { break };
                        if conn.write(&frame).is_err() {
                            self.drop_host_link(&host, &conn);
                            break;
                        }
                        q.frames.lock().pop_front();
                        self.count_out(&format!("router@{host}"));
                    }
                }
                None => {
                    self.unreachable(&q);
                    let mut frames = q.frames.lock();
                    if !frames.is_empty() && !self.stopping() {
                        q.wake.wait_for(&mut frames, backoff);
                    }
                    backoff = (backoff * 2).min(BACKOFF_MAX);
                }
            }
        }
    }

    /// `host` cannot be reached: move locally originated frames to its
    /// proxy, or drop those that have waited too long.
    fn unreachable(self: &Arc<Self>, q: &HostQueue) {
        let proxy = self.config.proxy_for.get(&q.host).filter(|p| **p != q.host);
        let mut frames = q.frames.lock();
        if let Some(proxy) = proxy {
            let (held, moved): (VecDeque<_>, VecDeque<_>) = frames.drain(..).partition(|f| f.hold);
            *frames = held;
            drop(frames);
            if !moved.is_empty() {
                log::info!(target: "router", "event=proxy_redirect host={} proxy={proxy} frames={}", q.host, moved.len());
            }
            for f in moved {
                self.enqueue(proxy, f.frame, false);
            }
            return;
        }
        while frames.front().is_some_and(|f| !f.hold && f.since.elapsed() >= self.config.forward_timeout) {
            frames.pop_front();
            self.drop_frame("peer_unreachable", &q.host);
        }
    }

    fn close_idle(&self, host: &str) {
        let mut hosts = self.hosts.lock();
        if hosts.get(host).is_some_and(|c| c.outbound) {
            if let Some(c) = hosts.remove(host) {
                log::debug!(target: "router", "event=idle_close host={host}");
                c.close();
            }
        }
    }

    /// Keeps a link open to our own proxy so it can hand over held frames.
    fn keep_proxy_link(self: Arc<Self>, proxy: &str) {
        let Some(endpoint) = self.config.peers.get(proxy).cloned() else { return };
        while !self.stopping() {
            if !self.hosts.lock().contains_key(proxy) {
                if let Err(e) = self.connect_peer(proxy, &endpoint) {
                    log::debug!(target: "router", "event=proxy_unreachable proxy={proxy} error={e}");
                }
            }
            thread::sleep(PROXY_POLL);
        }
    }
}
