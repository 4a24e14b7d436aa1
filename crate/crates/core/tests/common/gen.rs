//! Term generators for property tests.

use icomm::address::{Address, ThreadRef};
use icomm::term::Term;
use proptest::prelude::*;

/// A term with variable leaves given as indices into a pool, so that
/// sharing can be generated.
#[derive(Debug, Clone)]
pub enum Shape {
    Atom(String),
    Int(i64),
    Str(String),
    Var(usize),
    Compound(String, Vec<Shape>),
    List(Vec<Shape>, Option<Box<Shape>>),
}

pub const POOL: usize = 6;

pub fn leaf() -> impl Strategy<Value = Shape> {
    prop_oneof![
        "\\PC{0,8}".prop_map(Shape::Atom),
        prop::sample::select(vec!["[]", "a", "[", "'", "\\", ",", "|", "_", "X", ".", "-", "@", ":", "!", "{}"])
            .prop_map(|s| Shape::Atom(s.to_string())),
        any::<i64>().prop_map(Shape::Int),
        "\\PC{0,8}".prop_map(Shape::Str),
        (0..POOL).prop_map(Shape::Var),
    ]
}

pub fn shape() -> impl Strategy<Value = Shape> {
    leaf().prop_recursive(4, 48, 5, |inner| {
        prop_oneof![
            ("\\PC{1,6}", prop::collection::vec(inner.clone(), 1..5)).prop_map(|(f, a)| Shape::Compound(f, a)),
            (
                prop::sample::select(vec![".", ",", ":", "@", "?", "-", "[]", "{}"]),
                prop::collection::vec(inner.clone(), 1..4)
            )
                .prop_map(|(f, a)| Shape::Compound(f.to_string(), a)),
            (prop::collection::vec(inner.clone(), 0..4), prop::option::of(inner))
                .prop_map(|(items, tail)| Shape::List(items, tail.map(Box::new))),
        ]
    })
}

/// Half the pool is named `V0`, `V1`, ...; the rest is unnamed.
pub fn pool() -> Vec<Term> {
    (0..POOL).map(|i| if i % 2 == 0 { Term::named_var(&format!("V{i}")) } else { Term::var() }).collect()
}

pub fn build(s: &Shape, pool: &[Term]) -> Term {
    match s {
        Shape::Atom(a) => Term::atom(a),
        Shape::Int(i) => Term::int(*i),
        Shape::Str(s) => Term::string(s),
        Shape::Var(i) => pool[*i].clone(),
        Shape::Compound(f, args) => Term::compound(f, args.iter().map(|a| build(a, pool)).collect()),
        Shape::List(items, tail) => {
            let tail = tail.as_ref().map_or_else(Term::nil, |t| build(t, pool));
            items.iter().rev().fold(tail, |acc, x| Term::cons(build(x, pool), acc))
        }
    }
}

pub fn term() -> impl Strategy<Value = Term> {
    shape().prop_map(|s| build(&s, &pool()))
}

pub fn component() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,6}"
}

pub fn address() -> impl Strategy<Value = Address> {
    (
        prop_oneof![any::<u32>().prop_map(|i| ThreadRef::Id(i as u64)), component().prop_map(ThreadRef::Symbol)],
        component(),
        component(),
    )
        .prop_map(|(t, p, h)| Address::new(t, &p, &h))
}

/// Small alphabets so that random pairs unify about as often as not.
pub fn small_shape() -> impl Strategy<Value = Shape> {
    let leaf = prop_oneof![
        prop::sample::select(vec!["a", "b"]).prop_map(|s| Shape::Atom(s.into())),
        (0i64..2).prop_map(Shape::Int),
        (0..4usize).prop_map(Shape::Var),
    ];
    leaf.prop_recursive(3, 16, 2, |inner| {
        (prop::sample::select(vec!["f", "g"]), prop::collection::vec(inner, 1..3))
            .prop_map(|(f, a)| Shape::Compound(f.into(), a))
    })
}

pub fn small_pool() -> Vec<Term> {
    (0..4).map(|_| Term::var()).collect()
}
