//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use common::gen::*;
use common::oracle;
use common::*;
use icomm::codec::{self, Flags};
use icomm::linda;
use icomm::mailbox::{Pattern, Timeout};
use icomm::query::{self, RemoteStream};
use icomm::router::{Router, RouterConfig};
use icomm::runtime::{Choice, Node};
use icomm::term::{parse_text, term_to_text, Bindings, Term};
use proptest::test_runner::{Config, TestRunner};

const WAIT: Duration = Duration::from_secs(5);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:.2?}, limit {limit:?}");
    Ok(took)
}

fn sink(r: &Router, process: &str) -> (Node, mpsc::Receiver<Term>) {
    let (tx, rx) = mpsc::channel();
    let node = node_with(r, process, |n| {
        n.spawn(Some("sink"), move |ctx| {
            while let Ok(got) = ctx.search(&Pattern::any()) {
                if tx.send(got.envelope.payload).is_err() {
                    return;
                }
            }
        })
        .unwrap();
    });
    (node, rx)
}

fn numbered(n: i64) -> Vec<Term> {
    (0..n).map(|i| Term::compound("m", vec![Term::int(i)])).collect()
}

fn recv_n(rx: &mpsc::Receiver<Term>, n: usize) -> Result<Vec<Term>, String> {
    (0..n).map(|i| rx.recv_timeout(WAIT).map_err(|_| format!("message {i} never arrived"))).collect()
}

fn two_routers() -> (Router, Router) {
    let p2 = free_port();
    let r1 = Router::start(RouterConfig::new("h1", "127.0.0.1:0").peer("h2", &format!("127.0.0.1:{p2}"))).unwrap();
    let r2 =
        Router::start(RouterConfig::new("h2", &format!("127.0.0.1:{p2}")).peer("h1", &r1.local_addr().to_string()))
            .unwrap();
    (r1, r2)
}

fn hop_counts() -> Outcome {
    let start = Instant::now();

    let r = router("h1");
    let (b, rx) = sink(&r, "pb");
    let a = node_on(&r, "pa");
    let mut ctx = a.attach(None).unwrap();
    ctx.send_to(&t("ping"), &dest("sink:pb@h1")).unwrap();
    ensure!(rx.recv_timeout(WAIT).ok() == Some(t("ping")), "same-router message lost");
    let same = a.stats().frames_out + r.stats().frames_out;
    ensure!(same == 2, "same router: {same} frames, want 2");

    let mut x = a.attach(Some("x")).unwrap();
    let before = (a.stats().frames_out, r.stats().frames_in);
    ctx.send_to(&t("local"), &dest("x:pa@h1")).unwrap();
    ensure!(x.search_within(&Pattern::any(), Timeout::After(WAIT)).is_ok(), "in-node message lost");
    let after = (a.stats().frames_out, r.stats().frames_in);
    let local = (after.0 - before.0) + (after.1 - before.1);
    ensure!(local == 0, "in node: {local} frames, want 0");
    drop((ctx, x));
    a.shutdown();
    b.shutdown();
    r.shutdown();

    let (r1, r2) = two_routers();
    let (b, rx) = sink(&r2, "pb");
    let a = node_on(&r1, "pa");
    a.attach(None).unwrap().send_to(&t("ping"), &dest("sink:pb@h2")).unwrap();
    ensure!(rx.recv_timeout(WAIT).ok() == Some(t("ping")), "cross-router message lost");
    let cross = a.stats().frames_out + r1.stats().frames_out + r2.stats().frames_out;
    ensure!(cross == 3, "cross router: {cross} frames, want 3");
    a.shutdown();
    b.shutdown();
    r1.shutdown();
    r2.shutdown();

    let took = within(Duration::from_secs(10), start)?;
    Ok(format!("same router 2, cross router 3, in node 0; {took:.2?}"))
}

fn linda_oracle() -> Outcome {
    let start = Instant::now();
    let r = router("h");
    let sets = oracle::scripts();
    for (i, set) in sets.iter().enumerate() {
        let allowed: Vec<_> = oracle::outcomes(set).iter().map(|o| oracle::by_functor(o, set)).collect();
        for run in 0..50 {
            let got = oracle::run_concurrently(&r, i * 100 + run, set, run as u64);
            ensure!(allowed.contains(&got), "script set {i}, run {run}: {got:?} matches no schedule");
        }
    }
    r.shutdown();
    let took = within(Duration::from_secs(60), start)?;
    Ok(format!("{} script sets x 50 runs; {took:.2?}", sets.len()))
}

fn linda_server(r: &Router) -> (Node, icomm::address::Destination) {
    let node = node_with(r, "linda_server", |n| {
        linda::start_server(n).unwrap();
    });
    (node, dest(&format!("{}:linda_server@{}", linda::SERVER_THREAD, r.host())))
}

fn blocking() -> Outcome {
    let r = router("h");
    let (s, srv) = linda_server(&r);
    let c = node_on(&r, "c");
    let mut putter = c.attach(None).unwrap();
    linda::connect(&mut putter, &srv).unwrap();
    for i in 0..100 {
        let (tx, rx) = mpsc::channel();
        let srv2 = srv.clone();
        c.spawn(None, move |ctx| {
            linda::connect(ctx, &srv2).unwrap();
            let _ = tx.send(linda::in_(ctx, &t("ready(X)")));
            let _ = linda::disconnect(ctx);
        })
        .unwrap();
        ensure!(rx.recv_timeout(Duration::from_millis(30)).is_err(), "trial {i}: in returned before out");
        let want = Term::compound("ready", vec![Term::int(i)]);
        linda::out(&mut putter, &want).unwrap();
        match rx.recv_timeout(WAIT) {
            Ok(Ok(got)) if got == want => {}
            other => return Err(format!("trial {i}: got {other:?}")),
        }
    }

    let (tx, rx) = mpsc::channel();
    for _ in 0..2 {
        let (tx, srv) = (tx.clone(), srv.clone());
        c.spawn(None, move |ctx| {
            linda::connect(ctx, &srv).unwrap();
            if linda::in_(ctx, &t("token")).is_ok() {
                let _ = tx.send(());
            }
        })
        .unwrap();
    }
    std::thread::sleep(Duration::from_millis(100));
    linda::out(&mut putter, &t("token")).unwrap();
    ensure!(rx.recv_timeout(WAIT).is_ok(), "no waiter woke");
    ensure!(rx.recv_timeout(Duration::from_secs(1)).is_err(), "both waiters woke on one out");
    drop(putter);
    c.shutdown();
    s.shutdown();
    r.shutdown();
    Ok("100/100 in-before-out; one of two waiters woke".into())
}

fn query_transparency() -> Outcome {
    let start = Instant::now();
    let r = router("h");
    let nodes = three_node_graph(&r);
    let c = node_on(&r, "client");
    let mut ctx = c.attach(None).unwrap();
    let union = union_graph();
    let timeout = Timeout::After(WAIT);
    let drain = |ctx: &mut icomm::runtime::Ctx, goal: &Term, server: &str| -> Result<Vec<Term>, String> {
        let mut s = RemoteStream::open(ctx, goal, &dest(server), timeout).map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        while let Some(a) = s.next_answer(ctx).map_err(|e| e.to_string())? {
            out.push(a);
        }
        Ok(out)
    };
    let sorted = |v: &[Term]| {
        let mut s: Vec<String> = v.iter().map(term_to_text).collect();
        s.sort();
        s
    };
    let mut goals = 0;
    for goal in ["path(a, X)", "path(X, g)", "path(X, Y)", "path(i, X)", "path(a, i)"] {
        let goal = t(goal);
        let local = query::solve_all(&union, &goal);
        let all =
            query::query_all(&mut ctx, &goal, &dest("query_thread:qs_a@h"), timeout).map_err(|e| e.to_string())?;
        ensure!(sorted(&all) == sorted(&local), "all_of {goal}: {} answers, oracle {}", all.len(), local.len());
        let streamed = drain(&mut ctx, &goal, "query_thread:qs_a@h")?;
        ensure!(sorted(&streamed) == sorted(&local), "stream_of {goal} differs from the oracle");
        goals += 1;
    }
    for goal in ["edge(X, Y)", "edge(a, X)", "edge(X, g)"] {
        let goal = t(goal);
        let local = query::solve_all(&union, &goal);
        let streamed = drain(&mut ctx, &goal, "query_thread:qs_b@h")?;
        ensure!(streamed == local, "stream_of {goal} from qs_b is not the oracle sequence");
        goals += 1;
    }
    drop(ctx);
    for n in nodes {
        n.shutdown();
    }
    c.shutdown();
    r.shutdown();
    let took = within(Duration::from_secs(30), start)?;
    Ok(format!("{goals} goals; {took:.2?}"))
}

fn orphan_gc() -> Outcome {
    let r = router("h");
    let nodes = stream_chain(&r);
    let c = node_on(&r, "client");
    let mut ctx = c.attach(None).unwrap();
    let live = || nodes.iter().map(query::live_generators).sum::<usize>();
    let mut worst = Duration::ZERO;
    for trial in 0..20 {
        let mut st = RemoteStream::open(&mut ctx, &t("a(X)"), &dest("query_thread:chain_a@h"), Timeout::After(WAIT))
            .map_err(|e| e.to_string())?;
        ensure!(st.next_answer(&mut ctx).ok().flatten().is_some(), "trial {trial}: no first answer");
        ensure!(live() == 3, "trial {trial}: {} live generators before abandoning", live());
        drop(st);
        let start = Instant::now();
        ensure!(query::kill_orphans(&mut ctx) == 1, "trial {trial}: kill_orphans found nothing");
        ensure!(wait_until(WAIT, || live() == 0), "trial {trial}: {} generators still live after 5 s", live());
        worst = worst.max(start.elapsed());
        let facts: usize = nodes.iter().chain([&c]).map(query::open_streams).sum();
        ensure!(facts == 0, "trial {trial}: {facts} remote_thread facts left");
    }
    drop(ctx);
    for n in nodes {
        n.shutdown();
    }
    c.shutdown();
    r.shutdown();
    Ok(format!("20/20 quiescent, slowest {worst:.2?}"))
}

fn store_and_forward() -> Outcome {
    let r = router("h1");
    let (b, _) = sink(&r, "pb");
    b.shutdown();
    ensure!(wait_until(WAIT, || !r.registration_live("pb")), "registration stayed live");
    let a = node_on(&r, "pa");
    let mut ctx = a.attach(None).unwrap();
    for m in numbered(10) {
        ctx.send_to(&m, &dest("sink:pb@h1")).unwrap();
    }
    ensure!(wait_until(WAIT, || r.pending("pb") == 10), "router holds {} of 10", r.pending("pb"));
    let (b2, rx) = sink(&r, "pb");
    ensure!(recv_n(&rx, 10)? == numbered(10), "restart: out of order");
    drop(ctx);
    a.shutdown();
    b2.shutdown();
    r.shutdown();

    let (pa, pb, pp) = (free_port(), free_port(), free_port());
    let ep = |p: u16| format!("127.0.0.1:{p}");
    let proxy = Router::start(RouterConfig::new("hp", &ep(pp))).unwrap();
    let ra =
        Router::start(RouterConfig::new("ha", &ep(pa)).peer("hb", &ep(pb)).peer("hp", &ep(pp)).proxy_for("hb", "hp"))
            .unwrap();
    let b_config = RouterConfig::new("hb", &ep(pb)).peer("hp", &ep(pp)).peer("ha", &ep(pa)).with_proxy("hp");
    let rb = Router::start(b_config.clone()).unwrap();
    let (nb, rx) = sink(&rb, "pb");
    rb.shutdown();
    ensure!(wait_until(WAIT, || !proxy.host_link_live("hb")), "proxy still sees hb");
    let na = node_on(&ra, "pa");
    let mut ctx = na.attach(None).unwrap();
    for m in numbered(5) {
        ctx.send_to(&m, &dest("sink:pb@hb")).unwrap();
    }
    ensure!(wait_until(WAIT, || proxy.held_for("hb") == 5), "proxy holds {} of 5", proxy.held_for("hb"));
    ensure!(rx.try_recv().is_err(), "delivered while hb was down");
    let rb = Router::start(b_config).unwrap();
    ensure!(recv_n(&rx, 5)? == numbered(5), "proxy: out of order");
    drop(ctx);
    na.shutdown();
    nb.shutdown();
    for r in [ra, rb, proxy] {
        r.shutdown();
    }
    Ok("10/10 after restart, 5/5 through the proxy, in order".into())
}

fn run_cases<S: proptest::strategy::Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), proptest::test_runner::TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn codec_and_terms() -> Outcome {
    use proptest::prop_assert;
    run_cases(term(), |t| {
        let bin = codec::decode_term_binary(&codec::encode_term_binary(&t)).unwrap();
        prop_assert!(bin.is_variant(&t), "binary: {} came back as {}", t, bin);
        let text = parse_text(&term_to_text(&t)).unwrap();
        prop_assert!(text.is_variant(&t), "text: {} came back as {}", t, text);
        Ok(())
    })?;
    run_cases((small_shape(), small_shape(), small_shape(), small_shape()), |(p, q, x, y)| {
        let vars = small_pool();
        let mut b = Bindings::new();
        b.unify(&build(&p, &vars), &build(&q, &vars));
        let before = b.clone();
        if !b.unify(&build(&x, &vars), &build(&y, &vars)) {
            prop_assert!(b == before, "failed unification changed the bindings");
        }
        Ok(())
    })?;

    let node = Node::local("p", "h");
    let mut a = node.attach(Some("a")).unwrap();
    let mut b = node.attach(Some("b")).unwrap();
    let to = dest("b");
    let send = |a: &mut icomm::runtime::Ctx, f: &str, x: &Term, flags: Flags| {
        a.send(&Term::compound(f, vec![x.clone()]), &to, None, flags).unwrap();
    };
    let x = Term::var();
    send(&mut a, "p", &x, Flags::HIGH_LEVEL);
    send(&mut a, "q", &x, Flags::HIGH_LEVEL);
    let raw = Flags { encoded: true, remember_names: false };
    let y = Term::var();
    send(&mut a, "r", &y, raw);
    send(&mut a, "s", &y, raw);
    let mut take = |f: &str| b.search(&Pattern::new(Term::compound(f, vec![Term::var()]))).unwrap().envelope.payload;
    let (p, q, rr, s) = (take("p"), take("q"), take("r"), take("s"));
    ensure!(b.vars.unify(&p, &t("p(7)")), "p did not unify");
    ensure!(b.vars.resolve(&q) == t("q(7)"), "remember_names: q is {}", b.vars.resolve(&q));
    ensure!(b.vars.unify(&rr, &t("r(7)")), "r did not unify");
    ensure!(b.vars.resolve(&s).args()[0].as_var().is_some(), "without the option s is {}", b.vars.resolve(&s));
    drop((a, b));
    node.shutdown();
    Ok("1000 round trips per encoding, 1000 unification pairs, names shared only when asked".into())
}

fn message_choice() -> Outcome {
    let r = router("h");
    let receiver = node_on(&r, "receiver");
    let sender = node_on(&r, "sender");
    let mut a = sender.attach(None).unwrap();
    let mut b = receiver.attach(Some("inbox")).unwrap();
    for i in 0..100 {
        a.send_to(&t("second"), &dest("inbox:receiver@h")).unwrap();
        a.send_to(&t("first"), &dest("inbox:receiver@h")).unwrap();
        ensure!(wait_until(WAIT, || b.mailbox().len() == 2), "trial {i}: messages did not arrive");
        let picked = Choice::new()
            .on(Pattern::new(t("first")), |_, _| 1)
            .on(Pattern::new(t("second")), |_, _| 2)
            .run(&mut b)
            .unwrap();
        ensure!(picked == 2, "trial {i}: guard {picked} chosen");
        b.search(&Pattern::new(t("first"))).unwrap();
    }
    drop((a, b));
    sender.shutdown();
    receiver.shutdown();
    r.shutdown();

    let node = Node::local("p", "h");
    let mut ctx = node.attach(None).unwrap();
    let mut spans = Vec::new();
    for secs in [0.1, 0.5, 1.0] {
        let start = Instant::now();
        let fired =
            Choice::new().on(Pattern::new(t("never")), |_, _| false).after(secs, |_| true).run(&mut ctx).unwrap();
        let took = start.elapsed();
        let (lo, hi) = (Duration::from_secs_f64(secs), Duration::from_secs_f64(1.2 * secs + 0.05));
        ensure!(fired, "timeout({secs}) did not fire");
        ensure!(took >= lo && took <= hi, "timeout({secs}) fired after {took:.3?}, want [{lo:?}, {hi:?}]");
        spans.push(format!("{secs}s->{took:.3?}"));
    }
    drop(ctx);
    node.shutdown();
    Ok(format!("scan order 100/100; timeouts {}", spans.join(", ")))
}

fn main() {
    let _ = env_logger::builder().is_test(true).try_init();
    let criteria: [Criterion; 8] = [
        ("hop counts", hop_counts),
        ("linda interleaving oracle", linda_oracle),
        ("blocking in/out", blocking),
        ("distributed query transparency", query_transparency),
        ("orphan generator collection", orphan_gc),
        ("store and forward", store_and_forward),
        ("codec and term properties", codec_and_terms),
        ("message choice", message_choice),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", 8 - failed, 8);
    if failed > 0 {
        std::process::exit(1);
    }
}
