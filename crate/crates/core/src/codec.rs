//! Wire format.
//!
//! Every frame starts with the same header:
//!
//! ```text
//! u32 BE   length of everything after this field
//! u8       version (0x01)
//! u8       flags: bit0 encoded, bit1 remember_names, bit2 control
//! ```
//!
//! A data frame continues with the sender, reply-to and destination
//! addresses, each as a u16 BE byte length followed by the UTF-8 of the
//! address text, and then the body: canonical term text (raw) or the binary
//! term encoding (encoded), running to the end of the frame.
//!
//! A control frame continues with an opcode byte and one u16-length-prefixed
//! UTF-8 argument.
//!
//! Binary terms are tagged: `0x01` atom, `0x02` int (zigzag varint), `0x03`
//! string, `0x04` variable, `0x05` compound. Atom, string and variable
//! payloads are a varint byte length and UTF-8. An unnamed variable is an
//! empty name followed by a varint serial, so repeated occurrences decode to
//! one cell. A compound is the functor as an atom payload (no tag), a varint
//! arity, then the arguments.

use std::collections::HashMap;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::address::Address;
use crate::term::{parse_text, term_to_text, ParseError, Term, Var, VarId};

pub const VERSION: u8 = 0x01;
/// Upper bound on a single frame, to refuse garbage length prefixes.
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

const FLAG_ENCODED: u8 = 0x01;
const FLAG_REMEMBER: u8 = 0x02;
const FLAG_CONTROL: u8 = 0x04;

const TAG_ATOM: u8 = 0x01;
const TAG_INT: u8 = 0x02;
const TAG_STR: u8 = 0x03;
const TAG_VAR: u8 = 0x04;
const TAG_COMPOUND: u8 = 0x05;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("unsupported frame version {0:#04x}")]
    VersionMismatch(u8),
    #[error("frame truncated")]
    Truncated,
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("unknown term tag {0:#04x}")]
    UnknownTag(u8),
    #[error("invalid UTF-8")]
    Utf8,
    #[error("varint overflow")]
    Varint,
    #[error("compound with zero arity")]
    ZeroArity,
    #[error("body parse failure: {0}")]
    Body(#[from] ParseError),
    #[error("trailing bytes after term")]
    Trailing,
    #[error("address {0:?} is not fully qualified")]
    Unqualified(String),
    #[error("bad address in frame: {0}")]
    BadAddress(String),
    #[error("unknown control opcode {0:#04x}")]
    UnknownControl(u8),
    #[error("expected a data frame, got a control frame")]
    UnexpectedControl,
    #[error("expected a control frame, got a data frame")]
    UnexpectedData,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Flags {
    pub encoded: bool,
    pub remember_names: bool,
}

impl Flags {
    /// What the high-level send and receive operators use.
    pub const HIGH_LEVEL: Flags = Flags { encoded: true, remember_names: true };

    pub fn bits(self) -> u8 {
        (self.encoded as u8 * FLAG_ENCODED) | (self.remember_names as u8 * FLAG_REMEMBER)
    }

    pub fn from_bits(bits: u8) -> Flags {
        Flags { encoded: bits & FLAG_ENCODED != 0, remember_names: bits & FLAG_REMEMBER != 0 }
    }
}

/// A message in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub payload: Term,
    pub sender: Address,
    pub reply_to: Address,
    /// Destination; the router and inbound pump dispatch on it.
    pub to: Address,
    pub flags: Flags,
}

impl Envelope {
    /// An envelope whose reply-to is the sender.
    pub fn new(payload: Term, sender: Address, to: Address, flags: Flags) -> Envelope {
        Envelope { payload, reply_to: sender.clone(), sender, to, flags }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Control {
    /// A process announcing its name to its router.
    Register(String),
    RegisterAck(String),
    /// A router opening a link to another router, naming its own host.
    Hello(String),
}

impl Control {
    fn opcode(&self) -> (u8, &str) {
        match self {
            Control::Register(s) => (0x01, s),
            Control::RegisterAck(s) => (0x02, s),
            Control::Hello(s) => (0x03, s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Data(Box<Envelope>),
    Control(Control),
}

// ---- varints ---------------------------------------------------------------

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn byte(&mut self) -> Result<u8, CodecError> {
        let b = *self.buf.get(self.pos).ok_or(CodecError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CodecError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn varint(&mut self) -> Result<u64, CodecError> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.byte()?;
            let part = u64::from(b & 0x7f);
            if shift == 63 && part > 1 {
                return Err(CodecError::Varint);
            }
            v |= part << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(CodecError::Varint)
    }

    fn str_varint(&mut self) -> Result<&'a str, CodecError> {
        let n = usize::try_from(self.varint()?).map_err(|_| CodecError::Truncated)?;
        std::str::from_utf8(self.take(n)?).map_err(|_| CodecError::Utf8)
    }

    fn str_u16(&mut self) -> Result<&'a str, CodecError> {
        let n = u16::from_be_bytes([self.byte()?, self.byte()?]) as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| CodecError::Utf8)
    }
}

// ---- binary terms ----------------------------------------------------------

pub fn encode_term_binary(t: &Term) -> Vec<u8> {
    let mut out = Vec::new();
    let mut serials = HashMap::new();
    write_binary(&mut out, t, &mut serials);
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_varint(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn write_binary(out: &mut Vec<u8>, t: &Term, serials: &mut HashMap<VarId, u64>) {
    match t {
        Term::Atom(a) => {
            out.push(TAG_ATOM);
            put_str(out, a);
        }
        Term::Int(i) => {
            out.push(TAG_INT);
            put_varint(out, zigzag(*i));
        }
        Term::Str(s) => {
            out.push(TAG_STR);
            put_str(out, s);
        }
        Term::Var(v) => {
            out.push(TAG_VAR);
            match v.name() {
                Some(n) => put_str(out, n),
                None => {
                    put_varint(out, 0);
                    let next = serials.len() as u64;
                    put_varint(out, *serials.entry(v.id()).or_insert(next));
                }
            }
        }
        Term::Compound(f, args) => {
            out.push(TAG_COMPOUND);
            put_str(out, f);
            put_varint(out, args.len() as u64);
            for a in args {
                write_binary(out, a, serials);
            }
        }
    }
}

#[derive(Default)]
struct VarTable {
    named: HashMap<String, Var>,
    unnamed: HashMap<u64, Var>,
}

pub fn decode_term_binary(bytes: &[u8]) -> Result<Term, CodecError> {
    let mut r = Reader::new(bytes);
    let t = read_binary(&mut r, &mut VarTable::default())?;
    if r.pos != bytes.len() {
        return Err(CodecError::Trailing);
    }
    Ok(t)
}

fn read_binary(r: &mut Reader<'_>, vars: &mut VarTable) -> Result<Term, CodecError> {
    match r.byte()? {
        TAG_ATOM => Ok(Term::atom(r.str_varint()?)),
        TAG_INT => Ok(Term::Int(unzigzag(r.varint()?))),
        TAG_STR => Ok(Term::string(r.str_varint()?)),
        TAG_VAR => {
            let name = r.str_varint()?;
            let v = if name.is_empty() {
                let serial = r.varint()?;
                vars.unnamed.entry(serial).or_insert_with(Var::fresh).clone()
            } else {
                vars.named.entry(name.to_string()).or_insert_with(|| Var::named(name)).clone()
            };
            Ok(Term::Var(v))
        }
        TAG_COMPOUND => {
            let functor = r.str_varint()?.to_string();
            let arity = r.varint()?;
            if arity == 0 {
                return Err(CodecError::ZeroArity);
            }
            // every argument takes at least two bytes
            if arity > (r.buf.len() - r.pos) as u64 {
                return Err(CodecError::Truncated);
            }
            let args = (0..arity).map(|_| read_binary(r, vars)).collect::<Result<Vec<_>, _>>()?;
            Ok(Term::Compound(functor.into(), args))
        }
        other => Err(CodecError::UnknownTag(other)),
    }
}

// ---- frames ----------------------------------------------------------------

fn put_str_u16(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("address text under 64 KiB");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn finish_frame(mut body: Vec<u8>) -> Vec<u8> {
    let len = (body.len() - 4) as u32;
    body[..4].copy_from_slice(&len.to_be_bytes());
    body
}

fn qualified(a: &Address) -> Result<String, CodecError> {
    if a.is_qualified() {
        Ok(a.to_string())
    } else {
        Err(CodecError::Unqualified(a.to_string()))
    }
}

pub fn encode_envelope(e: &Envelope) -> Result<Vec<u8>, CodecError> {
    let sender = qualified(&e.sender)?;
    let reply_to = qualified(&e.reply_to)?;
    let to = qualified(&e.to)?;
    let mut out = vec![0, 0, 0, 0, VERSION, e.flags.bits()];
    put_str_u16(&mut out, &sender);
    put_str_u16(&mut out, &reply_to);
    put_str_u16(&mut out, &to);
    if e.flags.encoded {
        let mut serials = HashMap::new();
        write_binary(&mut out, &e.payload, &mut serials);
    } else {
        out.extend_from_slice(term_to_text(&e.payload).as_bytes());
    }
    Ok(finish_frame(out))
}

pub fn encode_control(c: &Control) -> Vec<u8> {
    let (op, arg) = c.opcode();
    let mut out = vec![0, 0, 0, 0, VERSION, FLAG_CONTROL, op];
    put_str_u16(&mut out, arg);
    finish_frame(out)
}

/// A complete frame and the bytes after it.
pub type Split<'a> = (&'a [u8], &'a [u8]);

/// Splits one complete frame off the front of `buf`, if present.
pub fn split_frame(buf: &[u8]) -> Result<Option<Split<'_>>, CodecError> {
    let Some(len) = buf.get(..4) else { return Ok(None) };
    let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(CodecError::TooLarge(len));
    }
    if buf.len() < 4 + len {
        return Ok(None);
    }
    Ok(Some(buf.split_at(4 + len)))
}

struct Header<'a> {
    flags: u8,
    rest: Reader<'a>,
}

fn header(frame: &[u8]) -> Result<Header<'_>, CodecError> {
    let mut r = Reader::new(frame);
    let len = u32::from_be_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(CodecError::TooLarge(len));
    }
    let body = r.take(len)?;
    let mut r = Reader::new(body);
    let version = r.byte()?;
    if version != VERSION {
        return Err(CodecError::VersionMismatch(version));
    }
    let flags = r.byte()?;
    Ok(Header { flags, rest: r })
}

fn read_address(r: &mut Reader<'_>) -> Result<Address, CodecError> {
    let text = r.str_u16()?;
    let a: Address = text.parse().map_err(|_| CodecError::BadAddress(text.to_string()))?;
    if !a.is_qualified() {
        return Err(CodecError::Unqualified(text.to_string()));
    }
    Ok(a)
}

pub fn decode_frame(frame: &[u8]) -> Result<Frame, CodecError> {
    let Header { flags, mut rest } = header(frame)?;
    if flags & FLAG_CONTROL != 0 {
        let op = rest.byte()?;
        let arg = rest.str_u16()?.to_string();
        return match op {
            0x01 => Ok(Frame::Control(Control::Register(arg))),
            0x02 => Ok(Frame::Control(Control::RegisterAck(arg))),
            0x03 => Ok(Frame::Control(Control::Hello(arg))),
            other => Err(CodecError::UnknownControl(other)),
        };
    }
    let sender = read_address(&mut rest)?;
    let reply_to = read_address(&mut rest)?;
    let to = read_address(&mut rest)?;
    let flags = Flags::from_bits(flags);
    let body = rest.rest();
    let payload = if flags.encoded {
        decode_term_binary(body)?
    } else {
        let text = std::str::from_utf8(body).map_err(|_| CodecError::Utf8)?;
        parse_text(text)?
    };
    Ok(Frame::Data(Box::new(Envelope { payload, sender, reply_to, to, flags })))
}

pub fn decode_envelope(frame: &[u8]) -> Result<Envelope, CodecError> {
    match decode_frame(frame)? {
        Frame::Data(e) => Ok(*e),
        Frame::Control(_) => Err(CodecError::UnexpectedControl),
    }
}

pub fn decode_control(frame: &[u8]) -> Result<Control, CodecError> {
    match decode_frame(frame)? {
        Frame::Control(c) => Ok(c),
        Frame::Data(_) => Err(CodecError::UnexpectedData),
    }
}

/// Reads only the destination of a data frame, leaving the body alone.
/// `Ok(None)` for control frames.
pub fn peek_destination(frame: &[u8]) -> Result<Option<Address>, CodecError> {
    let Header { flags, mut rest } = header(frame)?;
    if flags & FLAG_CONTROL != 0 {
        return Ok(None);
    }
    read_address(&mut rest)?;
    read_address(&mut rest)?;
    read_address(&mut rest).map(Some)
}

/// Reads one whole frame from a stream. `Ok(None)` on a clean end of
/// stream before the first byte.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, CodecError::TooLarge(n)));
    }
    let mut frame = vec![0u8; 4 + n];
    frame[..4].copy_from_slice(&len);
    r.read_exact(&mut frame[4..])?;
    Ok(Some(frame))
}

pub fn write_frame(w: &mut impl Write, frame: &[u8]) -> io::Result<()> {
    w.write_all(frame)?;
    w.flush()
}
