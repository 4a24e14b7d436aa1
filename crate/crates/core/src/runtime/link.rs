//! A node's connection to its router: registration, outbound frames and the
//! inbound pump.

use std::collections::VecDeque;
use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use parking_lot::Mutex;

use crate::codec::{self, decode_control, encode_control, read_frame, Control};

const BACKOFF_START: Duration = Duration::from_millis(20);
const BACKOFF_MAX: Duration = Duration::from_millis(1000);

struct LinkState {
    writer: Option<BufWriter<TcpStream>>,
    /// Frames written while disconnected, sent after the next registration.
    backlog: VecDeque<Vec<u8>>,
}

pub(crate) struct RouterLink {
    endpoint: String,
    process: String,
    state: Mutex<LinkState>,
    closed: AtomicBool,
    reader: Mutex<Option<TcpStream>>,
}

/// Connects and registers `process`, returning the read half once the
/// router has acknowledged.
fn register(endpoint: &str, process: &str) -> io::Result<(TcpStream, TcpStream)> {
    let stream = TcpStream::connect(endpoint)?;
    stream.set_nodelay(true)?;
    let mut w = stream.try_clone()?;
    codec::write_frame(&mut w, &encode_control(&Control::Register(process.to_string())))?;
    let mut r = stream.try_clone()?;
    let frame = read_frame(&mut r)?
        .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "router closed during registration"))?;
    match decode_control(&frame) {
        Ok(Control::RegisterAck(name)) if name == process => Ok((stream, w)),
        other => Err(io::Error::new(io::ErrorKind::InvalidData, format!("expected registration ack, got {other:?}"))),
    }
}

impl RouterLink {
    /// Connects, registers and starts the pump thread, which hands every
    /// inbound frame to `deliver`.
    pub(crate) fn start(
        endpoint: &str,
        process: &str,
        deliver: impl Fn(Vec<u8>) + Send + 'static,
    ) -> io::Result<Arc<RouterLink>> {
        let (read_half, write_half) = register(endpoint, process)?;
        let link = Arc::new(RouterLink {
            endpoint: endpoint.to_string(),
            process: process.to_string(),
            state: Mutex::new(LinkState { writer: Some(BufWriter::new(write_half)), backlog: VecDeque::new() }),
            closed: AtomicBool::new(false),
            reader: Mutex::new(Some(read_half.try_clone()?)),
        });
        let pump = link.clone();
        thread::Builder::new().name(format!("pump-{process}")).spawn(move || pump.run(read_half, deliver))?;
        Ok(link)
    }

    /// Queues `frame` for the router. Never fails: while the link is down
    /// frames wait in the backlog.
    pub(crate) fn send(&self, frame: Vec<u8>) {
        let mut guard = self.state.lock();
        let st = &mut *guard;
        if let Some(w) = st.writer.as_mut() {
            if st.backlog.is_empty() && codec::write_frame(w, &frame).is_ok() {
                return;
            }
            log::warn!(target: "runtime", "event=link_write_failed process={}", self.process);
            st.writer = None;
        }
        st.backlog.push_back(frame);
    }

    pub(crate) fn is_connected(&self) -> bool {
        self.state.lock().writer.is_some()
    }

    pub(crate) fn close(&self) {
        self.closed.store(true, Ordering::Release);
        if let Some(w) = self.state.lock().writer.take() {
            let _ = w.get_ref().shutdown(Shutdown::Both);
        }
        if let Some(r) = self.reader.lock().take() {
            let _ = r.shutdown(Shutdown::Both);
        }
    }

    fn run(self: Arc<Self>, mut stream: TcpStream, deliver: impl Fn(Vec<u8>)) {
        loop {
            let mut reader = BufReader::new(stream);
            loop {
                match read_frame(&mut reader) {
                    Ok(Some(frame)) => deliver(frame),
                    Ok(None) => break,
                    Err(e) => {
                        if !self.closed.load(Ordering::Acquire) {
                            log::warn!(target: "runtime", "event=link_read_failed process={} error={e}", self.process);
                        }
                        break;
                    }
                }
            }
            self.state.lock().writer = None;
            match self.reconnect() {
                Some(s) => stream = s,
                None => return,
            }
        }
    }

    fn reconnect(&self) -> Option<TcpStream> {
        let mut backoff = BACKOFF_START;
        while !self.closed.load(Ordering::Acquire) {
            thread::sleep(backoff);
            match register(&self.endpoint, &self.process) {
                Ok((read_half, write_half)) => {
                    let mut st = self.state.lock();
                    let mut w = BufWriter::new(write_half);
                    let mut flushed = true;
                    while let Some(f) = st.backlog.front() {
                        if codec::write_frame(&mut w, f).is_err() {
                            flushed = false;
                            break;
                        }
                        st.backlog.pop_front();
                    }
                    if !flushed {
                        drop(st);
                        backoff = (backoff * 2).min(BACKOFF_MAX);
                        continue;
                    }
                    if self.closed.load(Ordering::Acquire) {
                        let _ = read_half.shutdown(Shutdown::Both);
                        return None;
                    }
                    st.writer = Some(w);
                    *self.reader.lock() = read_half.try_clone().ok();
                    log::info!(target: "runtime", "event=link_reconnected process={}", self.process);
                    return Some(read_half);
                }
                Err(e) => {
                    log::debug!(target: "runtime", "event=link_retry process={} error={e}", self.process);
                    backoff = (backoff * 2).min(BACKOFF_MAX);
                }
            }
        }
        None
    }
}

impl Drop for RouterLink {
    fn drop(&mut self) {
        self.close();
    }
}
