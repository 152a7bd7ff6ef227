use super::*;
use crate::expr::{ScalarExpr, Q};
use crate::integrability::{verify_sds_integrable, IntegrableSystem};
use crate::expr::ZeroTester;
use crate::operator::{diffusion_equivalent, generator};
use crate::reduction::builtins::{bessel, damped_oscillator, radial_map, to_polar, torus_counterexample};

const DAMPED: &str = include_str!("../../documents/damped_oscillator.sds");
const BESSEL: &str = include_str!("../../documents/bessel.sds");
const BROWNIAN: &str = include_str!("../../documents/brownian_n.sds");
const EX22: &str = include_str!("../../documents/example22.sds");
const TORUS: &str = include_str!("../../documents/torus_counterexample.sds");
const INTEGRABLE: &str = include_str!("../../documents/integrable_110.sds");

fn ok(src: &str) -> SystemDoc {
    match parse(src) {
        Ok(d) => d,
        Err(errs) => panic!("{}", errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n")),
    }
}

fn errs(src: &str) -> Vec<ParseError> {
    parse(src).expect_err("document should be rejected")
}

fn roundtrip(doc: &SystemDoc) {
    let text = serialize(doc);
    let back = ok(&text);
    assert_eq!(&back, doc, "{text}");
    assert_eq!(serialize(&back), text);
}

#[test]
fn chart_with_bound_and_period() {
    let doc = ok("chart P { r > 0, theta mod 2*pi }");
    let p = &doc.charts["P"];
    assert_eq!(p.coords[0].lower, Some(Q::from_integer(0.into())));
    assert!(p.coords[1].period.as_ref().unwrap().equivalent(&ScalarExpr::int(2).mul(&ScalarExpr::pi())));
    assert!(serialize(&doc).contains("theta mod 2*pi"));
    roundtrip(&doc);
}

#[test]
fn missing_separator_in_noise_list() {
    let src = "chart M { x }\nfield X0 on M = d/dx\nsds X on M = X0 + [X1 X2]";
    let e = errs(src);
    assert_eq!(e.len(), 1);
    assert!(e[0].message.starts_with("expected ',' or ']'"));
    assert_eq!(e[0].expected, vec!["','", "']'"]);
    assert_eq!((e[0].line, e[0].column), (3, 22));
    assert_eq!(&src[e[0].start..e[0].start + 1], " ");
}

#[test]
fn damped_golden_file() {
    let doc = ok(DAMPED);
    let counts: Vec<usize> = doc.counts().iter().map(|(_, n)| *n).collect();
    assert_eq!(counts, vec![2, 0, 4, 1, 1, 1, 0, 0]);
    let f = ScalarExpr::func("f", 0, &ScalarExpr::coord("r"));
    assert_eq!(doc.sds["X"].sds, damped_oscillator(&f).unwrap());
    assert_eq!(doc.sds["X"].drift, vec!["Xh", "D"]);
    assert_eq!(doc.actions["SO2"].action.generators, vec![doc.fields["Xh"].clone()]);
    assert_eq!(doc.spans[&(DefKind::Field, "D".to_string())].line, 7);
    roundtrip(&doc);
}

#[test]
fn bundled_documents_match_builtins() {
    let b = ok(BESSEL);
    assert_eq!(b.sds["BES3"].sds, bessel(3).unwrap());
    let radial = radial_map(3).unwrap();
    assert_eq!(b.maps["radial"].components, radial.components);
    assert_eq!(b.maps["radial"].target, radial.target);
    let (x, map) = torus_counterexample();
    let t = ok(TORUS);
    assert_eq!(t.sds["X"].sds, x);
    assert_eq!(t.maps["proj"].components, map.components);
    let i = ok(INTEGRABLE);
    let f = ScalarExpr::func("f", 0, &ScalarExpr::coord("r"));
    let polar = to_polar(&damped_oscillator(&f).unwrap()).unwrap();
    let tester = ZeroTester::default();
    assert!(diffusion_equivalent(&i.sds["X"].sds, &polar, &tester).unwrap().holds());
    let sys = i.system("S").unwrap();
    assert!(verify_sds_integrable(&i.sds["X"].sds, sys, 8, &tester).unwrap().pass);
    assert_eq!(ok(BROWNIAN).actions["SO4"].generators.len(), 6);
    let e = ok(EX22);
    assert!(diffusion_equivalent(&e.sds["X"].sds, &e.sds["Y"].sds, &tester).unwrap().holds());
    for d in [BESSEL, BROWNIAN, EX22, TORUS, INTEGRABLE] {
        roundtrip(&ok(d));
    }
}

#[test]
fn builtin_roundtrips() {
    let mut doc = SystemDoc::new();
    doc.add_sds("Bessel", &bessel(3).unwrap()).unwrap();
    doc.add_map(&radial_map(2).unwrap()).unwrap();
    let f = ScalarExpr::func("f", 0, &ScalarExpr::coord("r"));
    let x = to_polar(&damped_oscillator(&f).unwrap()).unwrap();
    doc.add_sds("Polar", &x).unwrap();
    doc.add_operator("L", generator(&x)).unwrap();
    let z = VectorField::basis(&x.chart, "theta").unwrap();
    doc.add_system(&IntegrableSystem::new("S", &x.chart, vec![generator(&x)], vec![z], vec![]).unwrap())
        .unwrap();
    assert!(matches!(doc.add_sds("Bessel", &bessel(2).unwrap()), Err(DocError::Duplicate { .. })));
    roundtrip(&doc);
}

#[test]
fn duplicates_and_dangling_references() {
    let e = errs("chart M { x }\nfield A on M = d/dx\nfield A on M = x*d/dx");
    assert_eq!(e.len(), 1);
    assert!(e[0].message.contains("duplicate field `A`"), "{}", e[0]);
    assert_eq!(e[0].line, 3);

    let e = errs("chart M { x, y }\nfield Drift on M = d/dx\nsds X on M = Drfit + [Drift]");
    assert_eq!(e.len(), 1);
    assert_eq!(e[0].suggestion.as_deref(), Some("Drift"));
    assert_eq!((e[0].line, e[0].column), (3, 14));

    let e = errs("chart M { x, y }\nfield V on M = x*d/dz");
    assert_eq!(e[0].suggestion.as_deref(), Some("x"));

    let e = errs("chart M { x }\nscalar s on M = t + 1\nscalar t on M = x");
    assert!(e[0].message.contains("before its definition"), "{}", e[0]);

    let e = errs("chart M { x }\nchart N { y }\nfield V on N = d/dy\nsds X on M = V + []");
    assert!(e[0].message.contains("defined on chart `N`"));
}

#[test]
fn failed_definitions_do_not_cascade() {
    let e = errs("chart M { x }\nfield V on M = (1/0)*d/dx\nsds X on M = V + [V]\naction G on M generators [V]");
    assert_eq!(e.len(), 1, "{e:?}");
    assert!(e[0].message.contains("division by zero"));
}

#[test]
fn scalars_are_inlined_and_functions_kept_symbolic() {
    let doc = ok("chart M { x, y }\nscalar h on M = (x^2 + y^2)/2\nfield V on M = f'(h)*d/dx + 0.5*h*d/dy");
    let v = &doc.fields["V"];
    let h = ScalarExpr::coord("x").powi(2).unwrap().add(&ScalarExpr::coord("y").powi(2).unwrap()).mul(&ScalarExpr::ratio(1, 2));
    assert!(v.components[0].equivalent(&ScalarExpr::func("f", 1, &h)));
    assert!(v.components[1].equivalent(&h.mul(&ScalarExpr::ratio(1, 2))));
    roundtrip(&doc);
}

#[test]
fn operators_and_systems() {
    let doc = ok(
        "chart M { x, y }\nop L on M = 1/2*d/dx*d/dx + y*d/dx\nfield Z on M = d/dy\nscalar F on M = y\n\
         op K on M = d/dy*d/dy\nsystem S on M { lambda [L] z [Z] f [] }",
    );
    let l = &doc.operators["L"];
    assert_eq!(l.order(), 2);
    assert!(l.coefficient(&[2, 0]).equivalent(&ScalarExpr::ratio(1, 2)));
    assert_eq!(doc.systems["S"].operators, vec!["L"]);
    roundtrip(&doc);
    let e = errs("chart M { x }\nop L on M = d/dx*d/dx + 1\nsystem S on M { lambda [L] z [] f [] }");
    assert!(e[0].message.contains("invalid system"));
}

#[test]
fn errors_point_inside_the_source() {
    for src in ["", "chart", "chart M {", "sds X on M = X0 + [X1", "chart M { x }\nfield V on M = x*", "map P : A -> "] {
        let es = match parse(src) {
            Ok(d) => {
                assert!(src.trim().is_empty(), "{src:?} parsed as {d:?}");
                continue;
            }
            Err(es) => es,
        };
        for e in es {
            assert!(e.start <= src.len() && e.end <= src.len());
            assert!(e.line >= 1 && e.line <= src.lines().count().max(1));
        }
    }
}

#[test]
fn display_shows_a_caret() {
    let e = &errs("chart M { x }\nfield V on M = y*d/dx")[0];
    let shown = e.to_string();
    assert!(shown.starts_with("2:16: unknown name `y`"), "{shown}");
    assert!(shown.ends_with("|                ^"), "{shown}");
}
