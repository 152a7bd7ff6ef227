use std::sync::Arc;

use proptest::prelude::*;
use sds_core::dsl::{parse, serialize, SystemDoc};
use sds_core::expr::ScalarExpr;
use sds_core::geometry::{Chart, Coordinate, GroupAction, ScalarField, Sds, VectorField};
use sds_core::operator::DiffOp;
use sds_core::reduction::QuotientMap;

pub const DAMPED: &str = include_str!("../../documents/damped_oscillator.sds");

#[derive(Clone, Debug)]
pub enum Tree {
    Coord(usize),
    Const(i64, i64),
    Pi,
    Func(Box<Tree>),
    Add(Box<Tree>, Box<Tree>),
    Mul(Box<Tree>, Box<Tree>),
    Sin(Box<Tree>),
    Exp(Box<Tree>),
    Sqrt(Box<Tree>),
    OverSquare(Box<Tree>, usize),
}

pub fn tree() -> impl Strategy<Value = Tree> {
    let leaf = prop_oneof![
        (0usize..3).prop_map(Tree::Coord),
        (-5i64..6, 1i64..4).prop_map(|(n, d)| Tree::Const(n, d)),
        Just(Tree::Pi),
    ];
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Tree::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Tree::Mul(Box::new(a), Box::new(b))),
            inner.clone().prop_map(|a| Tree::Sin(Box::new(a))),
            inner.clone().prop_map(|a| Tree::Exp(Box::new(a))),
            inner.clone().prop_map(|a| Tree::Sqrt(Box::new(a))),
            inner.clone().prop_map(|a| Tree::Func(Box::new(a))),
            (inner, 0usize..3).prop_map(|(a, k)| Tree::OverSquare(Box::new(a), k)),
        ]
    })
}

pub fn build(t: &Tree, names: &[String]) -> ScalarExpr {
    let c = |i: &usize| ScalarExpr::coord(&names[i % names.len()]);
    match t {
        Tree::Coord(i) => c(i),
        Tree::Const(n, d) => ScalarExpr::ratio(*n, *d),
        Tree::Pi => ScalarExpr::pi(),
        Tree::Func(a) => ScalarExpr::func("g", 0, &build(a, names)),
        Tree::Add(a, b) => build(a, names).add(&build(b, names)),
        Tree::Mul(a, b) => build(a, names).mul(&build(b, names)),
        Tree::Sin(a) => build(a, names).sin(),
        Tree::Exp(a) => build(a, names).exp(),
        Tree::Sqrt(a) => build(a, names).sqrt(),
        Tree::OverSquare(a, i) => {
            let den = ScalarExpr::one().add(&c(i).mul(&c(i)));
            build(a, names).div(&den).expect("positive denominator")
        }
    }
}

#[derive(Clone, Debug)]
pub struct DocPlan {
    dims: [usize; 2],
    kinds: Vec<u8>,
    exprs: Vec<Tree>,
    noise: usize,
}

pub fn plan() -> impl Strategy<Value = DocPlan> {
    (
        [1usize..4, 1usize..3],
        prop::collection::vec(0u8..3, 5),
        prop::collection::vec(tree(), 24),
        0usize..3,
    )
        .prop_map(|(dims, kinds, exprs, noise)| DocPlan { dims, kinds, exprs, noise })
}

pub fn chart(name: &str, prefix: &str, dim: usize, kinds: &[u8]) -> Arc<Chart> {
    let coords = (0..dim)
        .map(|i| {
            let n = format!("{prefix}{i}");
            match kinds[i] {
                0 => Coordinate::free(&n),
                1 => Coordinate::positive(&n),
                _ => Coordinate::periodic(&n, ScalarExpr::int(2).mul(&ScalarExpr::pi())),
            }
        })
        .collect();
    Chart::new(name, coords).unwrap()
}

pub fn random_doc(p: &DocPlan) -> SystemDoc {
    let m = chart("M", "u", p.dims[0], &p.kinds);
    let n = chart("N", "v", p.dims[1], &p.kinds[3..]);
    let names = m.names();
    let mut e = p.exprs.iter().map(|t| build(t, &names));
    let mut next = || e.next().unwrap();
    let mut doc = SystemDoc::new();
    doc.add_scalar("s", ScalarField::new(&m, next()).unwrap()).unwrap();
    let field = |comps: Vec<ScalarExpr>| VectorField::new(&m, comps).unwrap();
    let drift = field((0..m.dim()).map(|_| next()).collect());
    let noise: Vec<VectorField> = (0..p.noise).map(|_| field((0..m.dim()).map(|_| next()).collect())).collect();
    doc.add_sds("X", &Sds::new(drift, noise).unwrap()).unwrap();
    let g = field((0..m.dim()).map(|_| next()).collect());
    doc.add_action("G", &GroupAction::new("G", vec![g]).unwrap()).unwrap();
    let comps = (0..n.dim()).map(|_| next()).collect();
    doc.add_map(&QuotientMap::new("phi", &m, &n, comps).unwrap()).unwrap();
    let mut alpha = vec![0u32; m.dim()];
    alpha[0] = 2;
    let op = DiffOp::from_terms(&m, [(alpha, next()), (vec![0; m.dim()], next())]).unwrap();
    doc.add_operator("L", op).unwrap();
    doc
}

pub fn check_spans(src: &str) -> Result<(), TestCaseError> {
    if let Err(errs) = parse(src) {
        prop_assert!(!errs.is_empty());
        let lines = src.split('\n').count();
        for e in errs {
            prop_assert!(e.start <= e.end && e.end <= src.len(), "{:?}", e);
            prop_assert!(src.is_char_boundary(e.start) && src.is_char_boundary(e.end));
            prop_assert!(e.line >= 1 && e.line <= lines, "{:?}", e);
            prop_assert!(e.column >= 1);
        }
    }
    Ok(())
}

pub fn roundtrip(p: &DocPlan) -> Result<(), TestCaseError> {
    let doc = random_doc(p);
    let text = serialize(&doc);
    let back = parse(&text).map_err(|e| TestCaseError::fail(format!("{e:?}\n{text}")))?;
    prop_assert_eq!(back, doc);
    Ok(())
}

pub fn rejects_bad_names(p: &DocPlan, which: usize) -> Result<(), TestCaseError> {
    let mut text = serialize(&random_doc(p));
    text.push_str(match which {
        0 => "sds X on M = 0 + []\n",
        1 => "sds Z on M = missing_field + []\n",
        _ => "action H on Q generators [G_gen1]\n",
    });
    prop_assert!(parse(&text).is_err());
    Ok(())
}

pub fn expression_roundtrip(t: &Tree, dim: usize) -> Result<(), TestCaseError> {
    let m = chart("M", "u", dim, &[0, 1, 2]);
    let e = build(t, &m.names());
    let text = e.to_string();
    let back = sds_core::dsl::parse_expression(&text, &m, &SystemDoc::new())
        .map_err(|errs| TestCaseError::fail(format!("{text}: {errs:?}")))?;
    prop_assert_eq!(back, e, "{}", text);
    Ok(())
}

pub fn mutate(cut: usize, len: usize, insert: &str) -> String {
    let mut src: String = DAMPED.chars().take(cut).collect();
    src.push_str(insert);
    src.extend(DAMPED.chars().skip(cut + len));
    src
}

pub fn token() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec![
        "chart", "field", "sds", "map", "op", "system", "action", "scalar", "on", "M", "x", "=", "+", "-",
        "*", "/", "^", "(", ")", "[", "]", "{", "}", ",", ":", "->", "d/dx", "2", "0.5", "mod", ">", "<",
        "generators", "lambda", "z", "f", "sqrt", "f'", "\n",
    ])
}
