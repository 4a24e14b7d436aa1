//! Command-line entry points: the router daemon, the two demo servers, a
//! one-shot tuple space client and the query REPL.
//!
//! Settings come from flags, then `QP_ROUTER`, `QP_HOST` and `QP_PROCESS`,
//! then an optional `key = value` file given with `--config`.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::address::Destination;
use crate::linda::{self, LindaError};
use crate::mailbox::Timeout;
use crate::query::{self, QueryError, RemoteStream};
use crate::router::{parse_pair, Router, RouterConfig, RouterError};
use crate::runtime::{Ctx, Node, NodeConfig, RuntimeError};
use crate::term::{parse_text, Bindings, ParseError, Term};

const DEFAULT_HOST: &str = "localhost";
const DEFAULT_LISTEN: &str = "127.0.0.1:7400";

#[derive(Parser, Debug)]
#[command(name = "icomm", version, about = "Message routing daemon, tuple space and query server")]
pub struct Cli {
    /// Settings file of `key = value` lines; flags and environment win over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct NodeArgs {
    /// Process name [env: QP_PROCESS]
    #[arg(short = 'A', long = "process")]
    pub process: Option<String>,
    /// Host label [env: QP_HOST]
    #[arg(long)]
    pub host: Option<String>,
    /// Router endpoint, host:port [env: QP_ROUTER]
    #[arg(long)]
    pub router: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a router.
    Router {
        /// Host label this router serves [env: QP_HOST]
        #[arg(long)]
        host: Option<String>,
        /// Listen address (default 127.0.0.1:7400)
        #[arg(long)]
        listen: Option<String>,
        /// Peer router, as host=endpoint; repeatable
        #[arg(long = "peer")]
        peers: Vec<String>,
        /// Proxy for a peer, as host=proxy-host; repeatable
        #[arg(long = "proxy-for")]
        proxy_for: Vec<String>,
        /// Proxy host holding this router's traffic while it is away
        #[arg(long)]
        proxy: Option<String>,
        /// Per-queue frame bound
        #[arg(long)]
        queue_bound: Option<usize>,
    },
    /// Run the tuple space server.
    LindaServer {
        #[command(flatten)]
        node: NodeArgs,
    },
    /// Run the query server over a clause file.
    QueryServer {
        #[command(flatten)]
        node: NodeArgs,
        /// Clauses, one per line: `Head :- Body.` or `Fact.`
        #[arg(long)]
        db: Option<PathBuf>,
    },
    /// Perform one tuple space operation.
    Linda {
        #[command(flatten)]
        node: NodeArgs,
        /// Server address (default main_linda_thread:linda_server)
        #[arg(long)]
        server: Option<String>,
        op: LindaOp,
        tuple: String,
    },
    /// Interactive query client.
    Query {
        #[command(flatten)]
        node: NodeArgs,
        /// Server address, e.g. query_thread:query_server@hostb
        #[arg(long)]
        server: Option<String>,
        /// Seconds to wait for each reply (default: forever)
        #[arg(long)]
        timeout: Option<f64>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LindaOp {
    Out,
    In,
    Rd,
    Inp,
    Rdp,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid {what} {value:?}")]
    BadValue { what: &'static str, value: String },
    #[error("cannot read config file {path}: {source}")]
    ConfigFile { path: PathBuf, source: io::Error },
    #[error("config file {path}, line {line}: expected key = value")]
    ConfigSyntax { path: PathBuf, line: usize },
    #[error("cannot read clause file {path}: {source}")]
    DbUnreadable { path: PathBuf, source: io::Error },
    #[error("clause file {path}: {source}")]
    DbParse { path: PathBuf, source: ParseError },
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Linda(#[from] LindaError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::BadValue { .. } | CliError::ConfigSyntax { .. } => 2,
            CliError::ConfigFile { .. } | CliError::DbUnreadable { .. } | CliError::DbParse { .. } => 3,
            _ => 1,
        }
    }
}

/// Everything a role needs, with every source already merged.
#[derive(Debug, Clone, PartialEq)]
pub enum LaunchConfig {
    Router(RouterConfig),
    LindaServer(NodeConfig),
    QueryServer { node: NodeConfig, db: PathBuf },
    LindaClient { node: NodeConfig, server: Destination, op: LindaOp, tuple: Term },
    QueryRepl { node: NodeConfig, server: Destination, timeout: Timeout },
}

/// Parsed `key = value` settings; keys may repeat.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile(HashMap<String, Vec<String>>);

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<ConfigFile, CliError> {
        let mut map: HashMap<String, Vec<String>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(CliError::ConfigSyntax { path: path.into(), line: i + 1 })?;
            map.entry(k.trim().to_string()).or_default().push(v.trim().to_string());
        }
        Ok(ConfigFile(map))
    }

    pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| CliError::ConfigFile { path: path.into(), source })?;
        ConfigFile::parse(&text, path)
    }

    fn last(&self, key: &str) -> Option<String> {
        self.0.get(key).and_then(|v| v.last().cloned())
    }

    fn all(&self, key: &str) -> Vec<String> {
        self.0.get(key).cloned().unwrap_or_default()
    }
}

struct Sources<'a> {
    env: &'a dyn Fn(&str) -> Option<String>,
    file: ConfigFile,
}

impl Sources<'_> {
    fn pick(&self, flag: &Option<String>, env: Option<&str>, key: &str) -> Option<String> {
        flag.clone().or_else(|| env.and_then(|e| (self.env)(e))).or_else(|| self.file.last(key))
    }

    fn list(&self, flag: &[String], key: &str) -> Vec<String> {
        if flag.is_empty() {
            self.file.all(key)
        } else {
            flag.to_vec()
        }
    }

    fn node(&self, a: &NodeArgs, role: &str, default_process: Option<String>) -> Result<NodeConfig, CliError> {
        let process = self
            .pick(&a.process, Some("QP_PROCESS"), "process")
            .or(default_process)
            .ok_or_else(|| CliError::Usage(format!("{role} needs a process name: -A <name>")))?;
        let host = self.pick(&a.host, Some("QP_HOST"), "host").unwrap_or_else(|| DEFAULT_HOST.into());
        let router = self
            .pick(&a.router, Some("QP_ROUTER"), "router")
            .ok_or_else(|| CliError::Usage(format!("{role} needs a router endpoint: --router <host:port>")))?;
        Ok(NodeConfig::new(&process, &host).router(router))
    }

    fn server(&self, flag: &Option<String>, default: Option<&str>) -> Result<Destination, CliError> {
        let s = self
            .pick(flag, None, "server")
            .or(default.map(String::from))
            .ok_or_else(|| CliError::Usage("a server address is needed: --server <thread:process@host>".into()))?;
        s.parse().map_err(|_| CliError::BadValue { what: "server address", value: s })
    }
}

fn client_name(kind: &str) -> Option<String> {
    Some(format!("{kind}_{}", std::process::id()))
}

/// Merges flags, environment (through `env`) and the config file.
pub fn launch_config(cli: &Cli, env: &dyn Fn(&str) -> Option<String>) -> Result<LaunchConfig, CliError> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let src = Sources { env, file };
    Ok(match &cli.command {
        Command::Router { host, listen, peers, proxy_for, proxy, queue_bound } => {
            let host = src.pick(host, Some("QP_HOST"), "host").unwrap_or_else(|| DEFAULT_HOST.into());
            let listen = src.pick(listen, None, "listen").unwrap_or_else(|| DEFAULT_LISTEN.into());
            let mut cfg = RouterConfig::new(&host, &listen);
            for p in src.list(peers, "peer") {
                let (h, ep) = parse_pair(&p).map_err(|_| CliError::BadValue { what: "peer", value: p.clone() })?;
                cfg = cfg.peer(&h, &ep);
            }
            for p in src.list(proxy_for, "proxy_for") {
                let (h, px) = parse_pair(&p).map_err(|_| CliError::BadValue { what: "proxy-for", value: p.clone() })?;
                cfg = cfg.proxy_for(&h, &px);
            }
            if let Some(p) = src.pick(proxy, None, "proxy") {
                cfg = cfg.with_proxy(&p);
            }
            let bound = queue_bound.map(|b| b.to_string());
            if let Some(b) = src.pick(&bound, None, "queue_bound") {
                cfg.queue_bound = b.parse().map_err(|_| CliError::BadValue { what: "queue bound", value: b })?;
            }
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            LaunchConfig::Router(cfg)
        }
        Command::LindaServer { node } => LaunchConfig::LindaServer(src.node(node, "linda-server", None)?),
        Command::QueryServer { node, db } => {
            let node = src.node(node, "query-server", None)?;
            let db = db
                .clone()
                .or_else(|| src.file.last("db").map(PathBuf::from))
                .ok_or_else(|| CliError::Usage("query-server needs a clause file: --db <file>".into()))?;
            LaunchConfig::QueryServer { node, db }
        }
        Command::Linda { node, server, op, tuple } => {
            let node = src.node(node, "linda", client_name("linda_client"))?;
            let server = src.server(server, Some(&format!("{}:{}", linda::SERVER_THREAD, linda::SERVER_PROCESS)))?;
            let tuple = parse_text(tuple.trim_end_matches('.'))
                .map_err(|_| CliError::BadValue { what: "tuple", value: tuple.clone() })?;
            LaunchConfig::LindaClient { node, server, op: *op, tuple }
        }
        Command::Query { node, server, timeout } => {
            let node = src.node(node, "query", client_name("query_client"))?;
            let server = src.server(server, None)?;
            let secs = timeout.map(|t| t.to_string());
            let timeout = match src.pick(&secs, None, "timeout") {
                None => Timeout::Block,
                Some(s) => match s.parse::<f64>() {
                    Ok(t) if t.is_finite() && t >= 0.0 => Timeout::After(Duration::from_secs_f64(t)),
                    _ => return Err(CliError::BadValue { what: "timeout", value: s }),
                },
            };
            LaunchConfig::QueryRepl { node, server, timeout }
        }
    })
}

/// Reads a clause file into `node`'s database.
pub fn load_db(node: &Node, path: &Path) -> Result<usize, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::DbUnreadable { path: path.into(), source })?;
    query::consult(node.db(), &text).map_err(|source| CliError::DbParse { path: path.into(), source })
}

/// Runs a role to completion. Servers only return on error.
pub fn run(cfg: LaunchConfig, input: impl BufRead, mut out: impl Write) -> Result<(), CliError> {
    match cfg {
        LaunchConfig::Router(cfg) => {
            let router = Router::start(cfg)?;
            writeln!(out, "listening on {}", router.local_addr())?;
            out.flush()?;
            while !router.is_shut_down() {
                std::thread::park_timeout(Duration::from_secs(1));
            }
            Ok(())
        }
        LaunchConfig::LindaServer(cfg) => {
            let node = Node::new(cfg);
            let main = linda::start_server(&node)?;
            node.connect()?;
            writeln!(out, "serving as {}", main.address)?;
            out.flush()?;
            main.join();
            Ok(())
        }
        LaunchConfig::QueryServer { node: cfg, db } => {
            let node = Node::new(cfg);
            let n = load_db(&node, &db)?;
            let main = query::start_server(&node)?;
            node.connect()?;
            writeln!(out, "serving {n} clauses as {}", main.address)?;
            out.flush()?;
            main.join();
            Ok(())
        }
        LaunchConfig::LindaClient { node: cfg, server, op, tuple } => {
            let node = Node::start(cfg)?;
            let mut ctx = node.attach(None)?;
            linda::connect(&mut ctx, &server)?;
            let shown = match op {
                LindaOp::Out => linda::out(&mut ctx, &tuple).map(|_| "inserted".to_string()),
                LindaOp::In => linda::in_(&mut ctx, &tuple).map(|t| t.to_string()),
                LindaOp::Rd => linda::rd(&mut ctx, &tuple).map(|t| t.to_string()),
                LindaOp::Inp => linda::inp(&mut ctx, &tuple).map(|t| t.map_or("fail".into(), |t| t.to_string())),
                LindaOp::Rdp => linda::rdp(&mut ctx, &tuple).map(|t| t.map_or("fail".into(), |t| t.to_string())),
            }?;
            writeln!(out, "{shown}")?;
            linda::disconnect(&mut ctx)?;
            drop(ctx);
            node.shutdown();
            Ok(())
        }
        LaunchConfig::QueryRepl { node: cfg, server, timeout } => {
            let node = Node::start(cfg)?;
            let ctx = node.attach(None)?;
            let mut repl = Repl::new(ctx, server, timeout, out);
            repl.run(input)?;
            drop(repl);
            node.shutdown();
            Ok(())
        }
    }
}

/// Line-oriented query client over one thread.
pub struct Repl<W: Write> {
    ctx: Ctx,
    server: Destination,
    timeout: Timeout,
    stream: Option<(Term, RemoteStream)>,
    out: W,
}

impl<W: Write> Repl<W> {
    pub fn new(ctx: Ctx, server: Destination, timeout: Timeout, out: W) -> Repl<W> {
        Repl { ctx, server, timeout, stream: None, out }
    }

    pub fn ctx(&mut self) -> &mut Ctx {
        &mut self.ctx
    }

    pub fn output(&self) -> &W {
        &self.out
    }

    pub fn has_stream(&self) -> bool {
        self.stream.is_some()
    }

    /// Runs commands until `quit` or end of input, then finishes any open
    /// stream.
    pub fn run(&mut self, input: impl BufRead) -> io::Result<()> {
        for line in input.lines() {
            if !self.command(&line?)? {
                break;
            }
        }
        self.close()
    }

    /// Handles one line. Returns false on `quit`.
    pub fn command(&mut self, line: &str) -> io::Result<bool> {
        let line = line.trim();
        let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        match cmd {
            "" => {}
            "all" => {
                if let Some(goal) = self.goal(rest)? {
                    self.all(&goal)?;
                }
            }
            "stream" => {
                if let Some(goal) = self.goal(rest)? {
                    self.close()?;
                    match RemoteStream::open(&mut self.ctx, &goal, &self.server, self.timeout) {
                        Ok(s) => {
                            self.stream = Some((goal, s));
                            writeln!(self.out, "stream open")?;
                        }
                        Err(e) => self.error(e)?,
                    }
                }
            }
            "next" => self.next()?,
            "finish" => {
                if self.stream.is_none() {
                    writeln!(self.out, "error: no open stream")?;
                } else {
                    self.close()?;
                    writeln!(self.out, "stream closed")?;
                }
            }
            "quit" | "exit" => return Ok(false),
            other => writeln!(self.out, "error: unknown command {other:?}; try all, stream, next, finish or quit")?,
        }
        self.out.flush()?;
        Ok(true)
    }

    fn goal(&mut self, text: &str) -> io::Result<Option<Term>> {
        let text = text.trim().trim_end_matches('.');
        if text.is_empty() {
            writeln!(self.out, "error: missing goal")?;
            return Ok(None);
        }
        match parse_text(text) {
            Ok(t) => Ok(Some(t)),
            Err(e) => {
                writeln!(self.out, "error: {e}")?;
                Ok(None)
            }
        }
    }

    fn error(&mut self, e: QueryError) -> io::Result<()> {
        writeln!(self.out, "error: {e}")
    }

    fn all(&mut self, goal: &Term) -> io::Result<()> {
        match query::query_all(&mut self.ctx, goal, &self.server, self.timeout) {
            Ok(answers) if answers.is_empty() => writeln!(self.out, "no"),
            Ok(answers) => answers.iter().try_for_each(|a| print_solution(&mut self.out, goal, a)),
            Err(e) => self.error(e),
        }
    }

    fn next(&mut self) -> io::Result<()> {
        let Some((goal, s)) = self.stream.as_mut() else {
            return writeln!(self.out, "error: no open stream");
        };
        match s.next_answer(&mut self.ctx) {
            Ok(Some(a)) => print_solution(&mut self.out, goal, &a),
            Ok(None) => {
                self.stream = None;
                writeln!(self.out, "no more answers")
            }
            Err(e) => self.error(e),
        }
    }

    fn close(&mut self) -> io::Result<()> {
        if let Some((_, s)) = self.stream.take() {
            if let Err(e) = s.finish(&mut self.ctx) {
                self.error(e)?;
            }
        }
        Ok(())
    }
}

impl<W: Write> Drop for Repl<W> {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

/// `Name = value` for each named variable of `goal`, then a blank line.
fn print_solution(out: &mut impl Write, goal: &Term, answer: &Term) -> io::Result<()> {
    let mut b = Bindings::new();
    if !b.unify(goal, answer) {
        return writeln!(out, "error: answer {answer} does not match the goal");
    }
    let mut any = false;
    for v in goal.vars() {
        let Some(name) = v.name().filter(|n| !n.starts_with('_')) else { continue };
        writeln!(out, "{name} = {}", b.resolve(&Term::Var(v.clone())))?;
        any = true;
    }
    if !any {
        writeln!(out, "true")?;
    }
    writeln!(out)
}

fn init_logging() {
    let env = env_logger::Env::default().default_filter_or("info");
    let _ = env_logger::Builder::from_env(env)
        .format(|buf, r| writeln!(buf, "{} {} {}", r.level(), r.target(), r.args()))
        .try_init();
}

/// The binary's entry point; returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging();
    let env = |k: &str| std::env::var(k).ok();
    let result = launch_config(&cli, &env).and_then(|cfg| run(cfg, io::stdin().lock(), io::stdout()));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("icomm: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("icomm").chain(args.iter().copied())).unwrap()
    }

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn missing_process_is_usage() {
        let e = launch_config(&cli(&["linda-server", "--router", "127.0.0.1:1"]), &no_env).unwrap_err();
        assert!(matches!(e, CliError::Usage(_)));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn flag_beats_env() {
        let env = |k: &str| match k {
            "QP_PROCESS" => Some("from_env".to_string()),
            "QP_ROUTER" => Some("127.0.0.1:9".to_string()),
            _ => None,
        };
        let c = launch_config(&cli(&["linda-server", "-A", "from_flag"]), &env).unwrap();
        let LaunchConfig::LindaServer(n) = c else { panic!() };
        assert_eq!(n.process, "from_flag");
        assert_eq!(n.router.as_deref(), Some("127.0.0.1:9"));
        assert_eq!(n.host, DEFAULT_HOST);
    }

    #[test]
    fn config_syntax() {
        let f = ConfigFile::parse("# c\nhost = b\npeer = a=1\npeer = c=2\n", Path::new("x")).unwrap();
        assert_eq!(f.last("host").as_deref(), Some("b"));
        assert_eq!(f.all("peer"), ["a=1", "c=2"]);
        assert!(matches!(ConfigFile::parse("oops", Path::new("x")), Err(CliError::ConfigSyntax { line: 1, .. })));
    }

    #[test]
    fn solution_lines() {
        let mut out = Vec::new();
        let goal = parse_text("edge(X, Y, _Z)").unwrap();
        print_solution(&mut out, &goal, &parse_text("edge(a, b, c)").unwrap()).unwrap();
        print_solution(&mut out, &parse_text("edge(a, b)").unwrap(), &parse_text("edge(a, b)").unwrap()).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "X = a\nY = b\n\ntrue\n\n");
    }
}
