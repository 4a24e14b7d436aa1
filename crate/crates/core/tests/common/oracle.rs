//! Brute-force model of the tuple space: every sequential schedule of a set
//! of client scripts, and a harness that runs the same scripts concurrently
//! against a real server.

use std::collections::{BTreeSet, HashSet};
use std::time::Duration;

use icomm::address::Destination;
use icomm::linda;
use icomm::router::Router;
use icomm::runtime::{Node, NodeConfig};
use icomm::term::{parse_text, term_to_text, Bindings, Term};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Out,
    In,
    Rd,
    Inp,
    Rdp,
}

/// One client's operations. Variables are shared across the whole script.
#[derive(Debug, Clone)]
pub struct Script(pub Vec<(Op, Term)>);

impl Script {
    /// Parses `"out(p(1)); in(p(X)); out(q(X))"`.
    pub fn parse(src: &str) -> Script {
        let list = parse_text(&format!("[{}]", src.replace(';', ","))).unwrap();
        let ops = list
            .as_list()
            .unwrap()
            .into_iter()
            .map(|op| {
                let (name, _) = op.functor().unwrap();
                let kind = match name {
                    "out" => Op::Out,
                    "in" => Op::In,
                    "rd" => Op::Rd,
                    "inp" => Op::Inp,
                    "rdp" => Op::Rdp,
                    other => panic!("unknown op {other}"),
                };
                (kind, op.args()[0].clone())
            })
            .collect();
        Script(ops)
    }
}

/// Per-client result texts and the final space, in insertion order.
pub type Outcome = (Vec<Vec<String>>, Vec<String>);

fn first_match(space: &[Term], pat: &Term, b: &Bindings) -> Option<usize> {
    space.iter().position(|t| {
        let mut trial = b.clone();
        trial.unify(pat, t)
    })
}

#[derive(Clone)]
struct State {
    space: Vec<Term>,
    pcs: Vec<usize>,
    bindings: Vec<Bindings>,
    results: Vec<Vec<String>>,
}

impl State {
    fn key(&self) -> String {
        let space: Vec<String> = self.space.iter().map(term_to_text).collect();
        format!("{:?}|{:?}|{:?}", self.pcs, space, self.results)
    }

    /// Applies client `c`'s next op, or `None` if it would block.
    fn step(&self, scripts: &[Script], c: usize) -> Option<State> {
        let (op, pat) = scripts[c].0.get(self.pcs[c])?;
        let mut s = self.clone();
        let b = &mut s.bindings[c];
        let text = match op {
            Op::Out => {
                s.space.push(b.resolve(pat));
                "inserted".to_string()
            }
            Op::In | Op::Rd | Op::Inp | Op::Rdp => match first_match(&self.space, pat, b) {
                Some(i) => {
                    assert!(b.unify(pat, &self.space[i]));
                    if matches!(op, Op::In | Op::Inp) {
                        s.space.remove(i);
                    }
                    term_to_text(&b.resolve(pat))
                }
                None if matches!(op, Op::In | Op::Rd) => return None,
                None => "fail".to_string(),
            },
        };
        s.results[c].push(text);
        s.pcs[c] += 1;
        Some(s)
    }
}

/// Every outcome of every complete sequential schedule. Panics if some
/// schedule deadlocks, since a concurrent run could then hang.
pub fn outcomes(scripts: &[Script]) -> BTreeSet<Outcome> {
    let n = scripts.len();
    let start =
        State { space: Vec::new(), pcs: vec![0; n], bindings: vec![Bindings::new(); n], results: vec![Vec::new(); n] };
    let mut seen = HashSet::new();
    let mut stack = vec![start];
    let mut out = BTreeSet::new();
    while let Some(s) = stack.pop() {
        if !seen.insert(s.key()) {
            continue;
        }
        let done = (0..n).all(|c| s.pcs[c] == scripts[c].0.len());
        if done {
            out.insert((s.results.clone(), s.space.iter().map(term_to_text).collect()));
            continue;
        }
        let next: Vec<State> = (0..n).filter_map(|c| s.step(scripts, c)).collect();
        assert!(!next.is_empty(), "script set can deadlock at {}", s.key());
        stack.extend(next);
    }
    out
}

/// Functors whose facts make up the space, for reading it back.
fn tuple_heads(scripts: &[Script]) -> Vec<Term> {
    let mut heads: Vec<(String, usize)> = Vec::new();
    for s in scripts {
        for (_, t) in &s.0 {
            let (f, a) = t.functor().unwrap();
            if !heads.iter().any(|(g, b)| g == f && *b == a) {
                heads.push((f.to_string(), a));
            }
        }
    }
    heads
        .into_iter()
        .map(|(f, a)| if a == 0 { Term::atom(&f) } else { Term::compound(&f, (0..a).map(|_| Term::var()).collect()) })
        .collect()
}

/// The facts of `node` for `heads`. The store keeps insertion order per
/// predicate, so the space reads back grouped by functor.
fn space_of(node: &Node, heads: &[Term]) -> Vec<String> {
    heads.iter().flat_map(|h| node.db().clauses(h)).map(|(head, _)| term_to_text(&head)).collect()
}

/// Reorders an outcome's space the way [`space_of`] reads it back.
pub fn by_functor(o: &Outcome, scripts: &[Script]) -> Outcome {
    let heads = tuple_heads(scripts);
    let mut space = Vec::new();
    for h in &heads {
        for t in &o.1 {
            let term = parse_text(t).unwrap();
            if term.functor() == h.functor() {
                space.push(t.clone());
            }
        }
    }
    (o.0.clone(), space)
}

/// Runs `scripts` concurrently against a fresh server behind `router`,
/// each client pausing a random 0 to 2 ms before each op.
pub fn run_concurrently(router: &Router, run: usize, scripts: &[Script], seed: u64) -> Outcome {
    let endpoint = router.local_addr().to_string();
    let server_proc = format!("linda_server_{run}");
    let server = Node::new(NodeConfig::new(&server_proc, router.host()).router(endpoint.clone()));
    linda::start_server(&server).unwrap();
    server.connect().unwrap();
    let clients =
        Node::start(NodeConfig::new(&format!("linda_clients_{run}"), router.host()).router(endpoint)).unwrap();
    let srv: Destination = format!("{}:{}@{}", linda::SERVER_THREAD, server_proc, router.host()).parse().unwrap();

    let mut handles = Vec::new();
    for (c, script) in scripts.iter().enumerate() {
        let mut ctx = clients.attach(None).unwrap();
        let script = script.clone();
        let srv = srv.clone();
        let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(c as u64));
        handles.push(std::thread::spawn(move || {
            linda::connect(&mut ctx, &srv).unwrap();
            let mut results = Vec::new();
            for (op, pat) in &script.0 {
                std::thread::sleep(Duration::from_micros(rng.random_range(0..2000)));
                let text = match op {
                    Op::Out => {
                        linda::out(&mut ctx, pat).unwrap();
                        "inserted".to_string()
                    }
                    Op::In => term_to_text(&linda::in_(&mut ctx, pat).unwrap()),
                    Op::Rd => term_to_text(&linda::rd(&mut ctx, pat).unwrap()),
                    Op::Inp => linda::inp(&mut ctx, pat).unwrap().map_or("fail".into(), |t| term_to_text(&t)),
                    Op::Rdp => linda::rdp(&mut ctx, pat).unwrap().map_or("fail".into(), |t| term_to_text(&t)),
                };
                results.push(text);
            }
            linda::disconnect(&mut ctx).unwrap();
            results
        }));
    }
    let results: Vec<Vec<String>> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let space = space_of(&server, &tuple_heads(scripts));
    clients.shutdown();
    server.shutdown();
    (results, space)
}

/// Ten script sets of up to three clients with up to six ops each. None of
/// them can deadlock.
pub fn scripts() -> Vec<Vec<Script>> {
    let sets: [&[&str]; 10] = [
        &["out(p(1)); out(p(2))", "in(p(X)); out(q(X))", "in(q(Y))"],
        &["out(p(1)); in(p(X))", "out(p(2)); in(p(Y))"],
        &["out(t(a)); out(t(b)); out(t(c))", "inp(t(X)); inp(t(Y))", "rdp(t(Z)); rd(t(W))"],
        &["in(p(X)); out(p(s(X)))", "out(p(0)); in(p(s(Y))); out(p(done))", "rd(p(done))"],
        &["out(c(1)); out(c(2)); out(c(3)); in(c(A)); in(c(B)); in(c(C))"],
        &["out(k(a, 1)); out(k(b, 2))", "in(k(b, V)); out(k(b, V)); rdp(k(a, W))", "inp(k(a, U)); out(k(c, 1))"],
        &["out(m); out(m); out(m)", "in(m); inp(m)", "in(m); rdp(m)"],
        &["out(x(1)); out(x(2)); out(x(3))", "rd(x(A)); in(x(A)); out(y(A))", "inp(z(B)); rdp(x(C)); rdp(y(D))"],
        &["out(f(1, 1)); out(f(1, 2))", "inp(f(A, A)); inp(f(B, C))", "rdp(f(1, D))"],
        &["out(s(1)); in(s(2)); out(s(3))", "in(s(1)); out(s(2)); in(s(3))"],
    ];
    sets.iter().map(|set| set.iter().map(|s| Script::parse(s)).collect()).collect()
}
