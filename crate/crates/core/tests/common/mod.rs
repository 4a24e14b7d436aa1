#![allow(dead_code)]

pub mod gen;
pub mod oracle;

use std::time::{Duration, Instant};

use icomm::address::Destination;
use icomm::router::{Router, RouterConfig};
use icomm::runtime::{Node, NodeConfig};
use icomm::term::{parse_text, Term};

pub fn t(s: &str) -> Term {
    parse_text(s).unwrap()
}

pub fn dest(s: &str) -> Destination {
    s.parse().unwrap()
}

/// Polls `cond` until it holds or `timeout` passes.
pub fn wait_until(timeout: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let end = Instant::now() + timeout;
    loop {
        if cond() {
            return true;
        }
        if Instant::now() >= end {
            return false;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

pub fn router(host: &str) -> Router {
    let _ = env_logger::builder().is_test(true).try_init();
    Router::start(RouterConfig::new(host, "127.0.0.1:0")).unwrap()
}

/// A free port on the loopback interface.
pub fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

pub fn node_on(r: &Router, process: &str) -> Node {
    Node::start(NodeConfig::new(process, r.host()).router(r.local_addr().to_string())).unwrap()
}

/// A node with threads set up by `setup` before it registers.
pub fn node_with(r: &Router, process: &str, setup: impl FnOnce(&Node)) -> Node {
    let node = Node::new(NodeConfig::new(process, r.host()).router(r.local_addr().to_string()));
    setup(&node);
    node.connect().unwrap();
    node
}

/// A query server named `process` behind `r`, holding `clauses`.
pub fn query_server(r: &Router, process: &str, clauses: &str) -> Node {
    node_with(r, process, |n| {
        icomm::query::consult(n.db(), clauses).unwrap();
        icomm::query::start_server(n).unwrap();
    })
}

/// Edges and paths split over three servers on `r`: `qs_a` holds the path
/// rules and asks `qs_b` for edges; `qs_b` holds some edges and asks `qs_c`
/// for the rest.
pub fn three_node_graph(r: &Router) -> [Node; 3] {
    let h = r.host();
    let c = query_server(r, "qs_c", GRAPH_C);
    let b = query_server(r, "qs_b", &format!("{GRAPH_B}\nedge(X, Y) :- edge(X, Y) ? query_thread:qs_c@{h}."));
    let a = query_server(
        r,
        "qs_a",
        &format!(
            "path(X, Y) :- edge(X, Y) ?? query_thread:qs_b@{h}.
             path(X, Y) :- edge(X, Z) ? query_thread:qs_b@{h}, path(Z, Y)."
        ),
    );
    [a, b, c]
}

pub const GRAPH_B: &str =
    "edge(a, b). edge(a, c). edge(b, c). edge(b, e). edge(c, d). edge(c, g). edge(b, d). edge(e, g).";
pub const GRAPH_C: &str =
    "edge(d, e). edge(e, f). edge(f, g). edge(d, g). edge(g, h). edge(a, h). edge(h, i). edge(f, i).";

/// The same clauses in one database, without remote calls.
pub fn union_graph() -> icomm::runtime::ClauseDb {
    let db = icomm::runtime::ClauseDb::new();
    icomm::query::consult(
        &db,
        &format!("{GRAPH_B} {GRAPH_C} path(X, Y) :- edge(X, Y). path(X, Y) :- edge(X, Z), path(Z, Y)."),
    )
    .unwrap();
    db
}

/// Servers for a chain of nested streams: `chain_a` streams from
/// `chain_b`, which streams from `chain_c`.
pub fn stream_chain(r: &Router) -> [Node; 3] {
    let h = r.host();
    let c = query_server(r, "chain_c", "c(1). c(2). c(3).");
    let b = query_server(r, "chain_b", &format!("b(X) :- c(X) ?? query_thread:chain_c@{h}."));
    let a = query_server(r, "chain_a", &format!("a(X) :- b(X) ?? query_thread:chain_b@{h}."));
    [a, b, c]
}
