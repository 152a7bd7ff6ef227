use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn doc(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "documents", name].iter().collect();
    p.display().to_string()
}

fn sds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sds"))
        .args(args)
        .env_remove("SDS_SEED")
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn scratch(text: &str) -> tempfile::NamedTempFile {
    let f = tempfile::Builder::new().suffix(".sds").tempfile().unwrap();
    std::fs::write(f.path(), text).unwrap();
    f
}

#[test]
fn bessel_reduction_renders_the_inverse_radius_drift() {
    let out = sds(&["reduce", &doc("bessel.sds"), "BM3", "--map", "radial"]);
    assert_eq!(code(&out), 0);
    let r = report(&out);
    assert_eq!(r["status"], "pass");
    assert_eq!(r["command"], "reduce");
    assert_eq!(r["result"]["realized"]["drift"][0], "1/r");
    assert_eq!(r["inputs"]["sha256"].as_str().unwrap().len(), 64);
    let dsl = r["result"]["realized"]["document"].as_str().unwrap();
    assert!(dsl.contains("sds BM3_reduced on Rplus"), "{dsl}");
    assert!(sds_core::dsl::parse(dsl).is_ok());
}

#[test]
fn strict_invariance_failure_carries_the_bracket() {
    let out = sds(&["check", "invariance", &doc("example22.sds"), "X", "ROT", "--mode", "strict"]);
    assert_eq!(code(&out), 1);
    let r = report(&out);
    assert_eq!(r["status"], "fail");
    let failed: Vec<&Value> = r["verdicts"].as_array().unwrap().iter().filter(|v| v["status"] == "fail").collect();
    assert!(!failed.is_empty());
    let w = &failed[0]["witness"];
    assert_eq!(w["label"], "d/dy");
    assert!(w["bracket"].as_str().unwrap().contains("d/dy"));

    let out = sds(&["check", "invariance", &doc("example22.sds"), "X", "ROT", "--mode", "diffusion"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn broken_documents_report_positions() {
    let f = scratch("chart R { x }\nfield A on R = x*d/dq\nsds B on R = A + [\n");
    let out = sds(&["parse", f.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    let r = report(&out);
    assert_eq!(r["status"], "error");
    let d = &r["diagnostics"][0];
    assert_eq!((d["line"].as_u64(), d["column"].as_u64()), (Some(2), Some(21)));
    assert_eq!(d["suggestion"], "x");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("2:21:"), "{stderr}");

    let out = sds(&["parse", &doc("integrable_110.sds")]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(&out)["result"]["definitions"]["system"], 1);
    let out = sds(&["parse", &doc("bessel.sds"), "--canonical"]);
    assert_eq!(code(&out), 0);
    assert!(sds_core::dsl::parse(&String::from_utf8_lossy(&out.stdout)).is_ok());
}

#[test]
fn numeric_zeros_are_inconclusive_only_on_request() {
    let f = scratch(
        "chart R { x }\nfield A on R = sin(2*x)*d/dx\nfield B on R = 2*sin(x)*cos(x)*d/dx\nsds P on R = A + []\nsds Q on R = B + []\n",
    );
    let path = f.path().to_str().unwrap();
    let out = sds(&["check", "equivalence", path, "P", "Q", "--symbolic"]);
    assert_eq!(code(&out), 2);
    let r = report(&out);
    assert_eq!(r["status"], "inconclusive");
    assert_eq!(r["verdicts"][0]["detail"]["zero_status"], "NumericZero");
    assert_eq!(code(&sds(&["check", "equivalence", path, "P", "Q"])), 0);
}

#[test]
fn usage_errors_exit_with_three() {
    let out = sds(&["check", "equivalence", &doc("example22.sds"), "X", "Nope"]);
    assert_eq!(code(&out), 3);
    assert!(report(&out)["error"].as_str().unwrap().contains("Nope"));
    assert_eq!(code(&sds(&["reduce", &doc("bessel.sds"), "BM3"])), 3);
    assert_eq!(code(&sds(&["frobnicate"])), 3);
    assert_eq!(code(&sds(&["parse", "/nonexistent/file.sds"])), 3);
    let out = sds(&["sim", "run", &doc("damped_oscillator.sds"), "X", "--start", "1,0"]);
    assert_eq!(code(&out), 3);
    assert!(report(&out)["error"].as_str().unwrap().contains("--define"));
    assert_eq!(code(&sds(&["--help"])), 0);
}

#[test]
fn first_integrals_in_both_modes() {
    let out = sds(&["check", "integral", &doc("torus_counterexample.sds"), "X", "theta1"]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(&out)["result"]["modes_agree"], true);
    let out = sds(&["check", "integral", &doc("example22.sds"), "X", "F", "--mode", "weak"]);
    assert_eq!(code(&out), 1);
    assert!(report(&out)["verdicts"][0]["witness"]["point"].is_array());
}

#[test]
fn torus_projection_is_rejected_with_a_fibre_pair() {
    let out = sds(&["reduce", &doc("torus_counterexample.sds"), "X", "--map", "proj"]);
    assert_eq!(code(&out), 1);
    let w = &report(&out)["verdicts"][0]["witness"];
    let fibre = |p: &Value| p[1][1].as_f64().unwrap();
    assert!((fibre(&w["first"]) - fibre(&w["second"])).abs() < 1e-9, "{w}");
    assert_ne!(w["values"][0], w["values"][1]);
}

#[test]
fn integrability_commands() {
    let d = doc("integrable_110.sds");
    assert_eq!(code(&sds(&["integrability", "verify", &d, "S", "--sds", "X"])), 0);
    let out = sds(&["integrability", "promote", &d, "S"]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(&out)["result"]["kind"], serde_json::json!([2, 0, 0]));
    let out = sds(&["integrability", "normal-form", &d, "X", "--chart", "polar", "--section", "theta=0"]);
    assert_eq!(code(&out), 0);
    let text = report(&out)["result"]["document"].as_str().unwrap().to_string();
    assert!(!text.contains("theta)"), "{text}");
    let out = sds(&["integrability", "normal-form", &d, "X", "--chart", "polar", "--section", "phi=0"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn equal_seeds_give_identical_reports() {
    let args = [
        "sim",
        "ks",
        &doc("bessel.sds"),
        "BM3",
        "BES3",
        "--start-first",
        "1,0,0",
        "--start-second",
        "1",
        "--observe-first",
        "sqrt(x^2 + y^2 + z^2)",
        "--paths",
        "2000",
        "--policy",
        "graded",
        "--seed",
        "9",
    ];
    let a = sds(&args);
    let b = sds(&args);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);

    let seeded = Command::new(env!("CARGO_BIN_EXE_sds")).args(&args[..args.len() - 2]).env("SDS_SEED", "9").output().unwrap();
    assert_eq!(seeded.stdout, a.stdout);
    let other = sds(&[&args[..args.len() - 1], &["10"]].concat());
    assert_ne!(other.stdout, a.stdout);
}

const SYSTEMS: &str = "chart R { x }
field D on R = -x*d/dx
field N on R = d/dx
sds OU on R = D + [N]
chart P { q, p }
field H on P = p*d/dq - q*d/dp
field K on P = q*d/dp
field G on P = -q*d/dq - p*d/dp
sds Spin on P = H + [K]
sds Damp on P = G + [K]
";

#[test]
fn simulation_commands() {
    let f = scratch(SYSTEMS);
    let path = f.path().to_str().unwrap();

    let out = sds(&["sim", "run", path, "OU", "--start", "0.5", "--paths", "1", "--horizon", "0.1", "--out", "csv"]);
    assert_eq!(code(&out), 0);
    let csv = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(csv.starts_with("t,x\n0,0.5\n"), "{csv}");
    assert_eq!(csv.lines().count(), 12);

    let out = sds(&["sim", "run", path, "Spin", "--start", "1,0", "--paths", "200"]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(&out)["result"]["stats"]["n"], 200);

    let out = sds(&["sim", "generator", path, "OU", "x^2", "--at", "-0.5"]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(&out)["result"]["symbolic"], 0.5);

    let out = sds(&["sim", "density", path, "OU", "--lo", "-3", "--hi", "3", "--start", "0", "--paths", "2000"]);
    assert_eq!(code(&out), 0);
    let out = sds(&["sim", "density", path, "OU", "--lo", "-3", "--hi", "3", "--start", "0", "--paths", "200", "--tol", "1e-4"]);
    assert_eq!(code(&out), 1);
    assert!(report(&out)["verdicts"][0]["witness"]["bin"].is_u64());

    let args = ["sim", "martingale", path, "Spin", "--start", "1,0", "--paths", "400", "--horizon", "4", "--stride", "10"];
    let out = sds(&[&args[..], &["--observable", "q^2 + p^2", "--rate", "0"]].concat());
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stdout));

    // The angle of a rotation with isotropic noise winds at unit mean rate.
    let rotation = doc("example22.sds");
    let args = ["sim", "martingale", &rotation, "X", "--start", "2,0", "--paths", "1000", "--horizon", "4", "--stride", "10"];
    let out = sds(&[&args[..], &["--angle", "x,y", "--rate", "1"]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let rate = report(&out)["result"]["mean_rate"].as_f64().unwrap();
    assert!((rate - 1.0).abs() < 0.05, "{rate}");
    let out = sds(&[&args[..], &["--angle", "x,y", "--out", "csv"]].concat());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("from,to,mean,stderr,z\n"));

    let out = sds(&["sim", "tensor", path, "Spin", "--start", "1,0"]);
    assert_eq!(code(&out), 0);
    assert!(report(&out)["result"]["convergence"]["order"].as_f64().unwrap() >= 0.9);
    let out = sds(&["sim", "tensor", path, "Damp", "--start", "1,0"]);
    assert_eq!(code(&out), 1);
    assert_eq!(report(&out)["verdicts"][0]["witness"]["component"], "dq^dp");
}
