//! `thread:process@host` addresses.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::term::{Bindings, Term};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad address {input:?}: {reason}")]
pub struct AddressError {
    pub input: String,
    pub reason: &'static str,
}

/// The thread part of an address: a numeric id or a symbolic name.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ThreadRef {
    Id(u64),
    Symbol(String),
}

impl fmt::Display for ThreadRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThreadRef::Id(id) => write!(f, "{id}"),
            ThreadRef::Symbol(s) => f.write_str(s),
        }
    }
}

impl ThreadRef {
    fn to_term(&self) -> Term {
        match self {
            ThreadRef::Id(id) => Term::Int(*id as i64),
            ThreadRef::Symbol(s) => Term::atom(s),
        }
    }

    fn from_term(t: &Term) -> Option<ThreadRef> {
        match t {
            Term::Int(i) if *i >= 0 => Some(ThreadRef::Id(*i as u64)),
            Term::Atom(a) if valid_component(a) => Some(ThreadRef::Symbol(a.to_string())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Address {
    pub thread: ThreadRef,
    pub process: Option<String>,
    pub host: Option<String>,
}

impl Address {
    pub fn new(thread: ThreadRef, process: &str, host: &str) -> Address {
        Address { thread, process: Some(process.into()), host: Some(host.into()) }
    }

    pub fn symbol(thread: &str, process: &str, host: &str) -> Address {
        Address::new(ThreadRef::Symbol(thread.into()), process, host)
    }

    pub fn is_qualified(&self) -> bool {
        self.process.is_some() && self.host.is_some()
    }

    /// `T`, `T:P` or `@(:(T,P),H)`; the shape the text syntax gives
    /// `t:p@h`.
    pub fn to_term(&self) -> Term {
        let thread = self.thread.to_term();
        let with_process = match &self.process {
            Some(p) => Term::compound(":", vec![thread, Term::atom(p)]),
            None => thread,
        };
        match &self.host {
            Some(h) => Term::compound("@", vec![with_process, Term::atom(h)]),
            None => with_process,
        }
    }

    pub fn from_term(t: &Term) -> Option<Address> {
        let (inner, host) = match t {
            Term::Compound(f, args) if &**f == "@" && args.len() == 2 => {
                (&args[0], Some(component_from_term(&args[1])?))
            }
            _ => (t, None),
        };
        let (thread, process) = match inner {
            Term::Compound(f, args) if &**f == ":" && args.len() == 2 => {
                (&args[0], Some(component_from_term(&args[1])?))
            }
            _ => (inner, None),
        };
        if host.is_some() && process.is_none() {
            return None;
        }
        Some(Address { thread: ThreadRef::from_term(thread)?, process, host })
    }
}

fn component_from_term(t: &Term) -> Option<String> {
    match t {
        Term::Atom(a) if valid_component(a) => Some(a.to_string()),
        Term::Int(i) if *i >= 0 => Some(i.to_string()),
        _ => None,
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.thread)?;
        if let Some(p) = &self.process {
            write!(f, ":{p}")?;
        }
        if let Some(h) = &self.host {
            write!(f, "@{h}")?;
        }
        Ok(())
    }
}

fn valid_component(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl FromStr for Address {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Address, AddressError> {
        let err = |reason| AddressError { input: s.to_string(), reason };
        let (rest, host) = match s.split_once('@') {
            Some((r, h)) => (r, Some(h)),
            None => (s, None),
        };
        let (thread, process) = match rest.split_once(':') {
            Some((t, p)) => (t, Some(p)),
            None => (rest, None),
        };
        if host.is_some() && process.is_none() {
            return Err(err("host given without process"));
        }
        for part in [Some(thread), process, host].into_iter().flatten() {
            if part.is_empty() {
                return Err(err("empty component"));
            }
            if !valid_component(part) {
                return Err(err("invalid character"));
            }
        }
        let thread = if thread.bytes().all(|b| b.is_ascii_digit()) {
            ThreadRef::Id(thread.parse().map_err(|_| err("thread id out of range"))?)
        } else {
            ThreadRef::Symbol(thread.to_string())
        };
        Ok(Address { thread, process: process.map(str::to_string), host: host.map(str::to_string) })
    }
}

/// Where a send goes: an address, or one of the reserved `self` and
/// `creator` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Destination {
    Me,
    Creator,
    To(Address),
}

impl From<Address> for Destination {
    fn from(a: Address) -> Self {
        Destination::To(a)
    }
}

impl Destination {
    pub fn from_term(t: &Term) -> Option<Destination> {
        match t.as_atom() {
            Some("self") => Some(Destination::Me),
            Some("creator") => Some(Destination::Creator),
            _ => Address::from_term(t).map(Destination::To),
        }
    }
}

impl FromStr for Destination {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Destination, AddressError> {
        parse_address(s)
    }
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Destination::Me => f.write_str("self"),
            Destination::Creator => f.write_str("creator"),
            Destination::To(a) => a.fmt(f),
        }
    }
}

pub fn parse_address(s: &str) -> Result<Destination, AddressError> {
    match s.trim() {
        "self" => Ok(Destination::Me),
        "creator" => Ok(Destination::Creator),
        other => other.parse().map(Destination::To),
    }
}

/// What a thread needs to turn short addresses into full ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressContext {
    pub self_thread: ThreadRef,
    pub creator: Address,
    pub local_process: String,
    pub local_host: String,
}

impl AddressContext {
    /// Context for a top-level thread, whose creator is itself.
    pub fn top_level(thread: ThreadRef, process: &str, host: &str) -> AddressContext {
        AddressContext {
            creator: Address::new(thread.clone(), process, host),
            self_thread: thread,
            local_process: process.into(),
            local_host: host.into(),
        }
    }

    pub fn own_address(&self) -> Address {
        Address::new(self.self_thread.clone(), &self.local_process, &self.local_host)
    }
}

/// Fills missing parts from `ctx` and expands `self`/`creator`.
pub fn resolve(dest: &Destination, ctx: &AddressContext) -> Address {
    match dest {
        Destination::Me => ctx.own_address(),
        Destination::Creator => ctx.creator.clone(),
        Destination::To(a) => Address {
            thread: a.thread.clone(),
            process: Some(a.process.clone().unwrap_or_else(|| ctx.local_process.clone())),
            host: Some(a.host.clone().unwrap_or_else(|| ctx.local_host.clone())),
        },
    }
}

/// Unifies an address pattern (any term, usually with variable slots)
/// against a ground address.
pub fn match_address(pattern: &Term, ground: &Address, bindings: &mut Bindings) -> bool {
    bindings.unify(pattern, &ground.to_term())
}

/// A pattern term with a variable in every slot left as `None`.
pub fn address_pattern(thread: Option<&ThreadRef>, process: Option<&str>, host: Option<&str>) -> Term {
    let thread = thread.map_or_else(Term::var, ThreadRef::to_term);
    let process = process.map_or_else(Term::var, Term::atom);
    let host = host.map_or_else(Term::var, Term::atom);
    Term::compound("@", vec![Term::compound(":", vec![thread, process]), host])
}
