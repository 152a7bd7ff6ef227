//! Zero testing: canonical-form check first, seeded numeric sampling second.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::eval::{Bindings, FunctionTable};
use super::{ExprError, ScalarExpr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ZeroStatus {
    SymbolicZero,
    NumericZero,
    NonZero,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroWitness {
    /// What was being tested (e.g. the coefficient of `d/dx`).
    pub label: Option<String>,
    pub point: Vec<(String, f64)>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroVerdict {
    pub status: ZeroStatus,
    pub witness: Option<ZeroWitness>,
    /// Largest absolute residual seen while sampling (0 for symbolic verdicts).
    pub max_residual: f64,
    pub samples: usize,
}

impl ZeroVerdict {
    pub fn symbolic() -> Self {
        ZeroVerdict {
            status: ZeroStatus::SymbolicZero,
            witness: None,
            max_residual: 0.0,
            samples: 0,
        }
    }

    /// True unless the verdict is `NonZero`.
    pub fn holds(&self) -> bool {
        self.status != ZeroStatus::NonZero
    }

    pub fn is_symbolic(&self) -> bool {
        self.status == ZeroStatus::SymbolicZero
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        if let Some(w) = self.witness.as_mut() {
            w.label = Some(label.into());
        }
        self
    }

    /// Conjunction: the weakest status wins, keeping the first failing witness.
    pub fn combine(verdicts: impl IntoIterator<Item = ZeroVerdict>) -> ZeroVerdict {
        let mut out = ZeroVerdict::symbolic();
        for v in verdicts {
            out.samples += v.samples;
            out.max_residual = out.max_residual.max(v.max_residual);
            if v.status > out.status {
                out.status = v.status;
                if v.status == ZeroStatus::NonZero {
                    out.witness = v.witness;
                }
            }
        }
        out
    }
}

/// Axis-aligned sampling box, one interval per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleBox {
    pub coords: Vec<(String, f64, f64)>,
}

impl SampleBox {
    pub fn new(coords: Vec<(String, f64, f64)>) -> Self {
        SampleBox { coords }
    }

    pub fn names(&self) -> Vec<String> {
        self.coords.iter().map(|(n, _, _)| n.clone()).collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.coords
            .iter()
            .map(|(_, lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    /// The point a quarter of the way along every interval.
    pub fn quarter_point(&self) -> Vec<f64> {
        self.coords.iter().map(|(_, lo, hi)| lo + 0.25 * (hi - lo)).collect()
    }
}

/// Configuration of the numeric fallback.
#[derive(Clone, Debug)]
pub struct ZeroTester {
    pub samples: usize,
    pub tol: f64,
    pub seed: u64,
    /// Definitions for uninterpreted functions; names without one are
    /// instantiated as seeded random cubics.
    pub functions: FunctionTable,
}

impl Default for ZeroTester {
    fn default() -> Self {
        ZeroTester {
            samples: 64,
            tol: 1e-9,
            seed: 0x5d5_0001,
            functions: FunctionTable::new(),
        }
    }
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ZeroTester {
    pub fn with_samples(samples: usize) -> Self {
        ZeroTester {
            samples,
            ..Default::default()
        }
    }

    fn function_table<'a>(&self, exprs: impl IntoIterator<Item = &'a ScalarExpr>) -> FunctionTable {
        let mut table = self.functions.clone();
        for name in exprs.into_iter().flat_map(|e| e.uninterpreted_functions()) {
            if table.get(&name).is_some() {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(&name));
            let coeffs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            table.insert_polynomial(&name, coeffs);
        }
        table
    }

    /// Numeric bindings (no coordinates yet) covering every uninterpreted
    /// function in `exprs`, instantiated exactly as the zero test does.
    pub fn bindings_for<'a>(&self, exprs: impl IntoIterator<Item = &'a ScalarExpr>) -> Bindings {
        Bindings::new(self.function_table(exprs))
    }

    /// Decides whether `e` vanishes on the box.
    pub fn is_zero(&self, e: &ScalarExpr, domain: &SampleBox) -> Result<ZeroVerdict, ExprError> {
        if self.samples == 0 {
            return Err(ExprError::NoSamples);
        }
        if e.is_zero() {
            return Ok(ZeroVerdict::symbolic());
        }
        let names = domain.names();
        for c in e.free_coords() {
            if !names.contains(&c) {
                return Err(ExprError::UnboundCoordinate(c));
            }
        }
        let mut bindings = Bindings::new(self.function_table([e]));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut accepted = 0usize;
        let mut attempts = 0usize;
        let mut max_residual: f64 = 0.0;
        while accepted < self.samples {
            if attempts >= 20 * self.samples + 20 {
                if accepted == 0 {
                    return Err(ExprError::EmptyDomain);
                }
                break;
            }
            let point = if attempts == 0 {
                domain.quarter_point()
            } else {
                domain.sample(&mut rng)
            };
            attempts += 1;
            for (n, v) in names.iter().zip(&point) {
                bindings.set(n, *v);
            }
            let (value, scale) = match e.eval_with_scale(&bindings) {
                Ok(v) => v,
                Err(ExprError::DomainViolation(_)) => continue,
                Err(other) => return Err(other),
            };
            accepted += 1;
            max_residual = max_residual.max(value.abs());
            if value.abs() > self.tol * (1.0 + scale) {
                return Ok(ZeroVerdict {
                    status: ZeroStatus::NonZero,
                    witness: Some(ZeroWitness {
                        label: None,
                        point: names.iter().cloned().zip(point).collect(),
                        residual: value,
                    }),
                    max_residual,
                    samples: accepted,
                });
            }
        }
        Ok(ZeroVerdict {
            status: ZeroStatus::NumericZero,
            witness: None,
            max_residual,
            samples: accepted,
        })
    }

    /// Conjunction of zero tests over labelled expressions.
    pub fn all_zero<'a>(
        &self,
        items: impl IntoIterator<Item = (String, &'a ScalarExpr)>,
        domain: &SampleBox,
    ) -> Result<ZeroVerdict, ExprError> {
        let mut verdicts = Vec::new();
        for (label, e) in items {
            let v = self.is_zero(e, domain)?.with_label(label);
            let failed = !v.holds();
            verdicts.push(v);
            if failed {
                break;
            }
        }
        Ok(ZeroVerdict::combine(verdicts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus() -> SampleBox {
        SampleBox::new(vec![("t1".into(), 0.0, 1.0), ("t2".into(), 0.0, 1.0)])
    }

    #[test]
    fn symbolic_zero_for_canonical_zero() {
        let x = ScalarExpr::coord("t1");
        let e = &(&x * &x) - &(&x * &x);
        assert_eq!(ZeroTester::default().is_zero(&e, &torus()).unwrap().status, ZeroStatus::SymbolicZero);
        let r = ScalarExpr::coord("t1");
        let e = r.sin().powi(2).unwrap() + r.cos().powi(2).unwrap() - ScalarExpr::one();
        assert!(ZeroTester::default().is_zero(&e, &torus()).unwrap().is_symbolic());
    }

    #[test]
    fn nonzero_sine_on_torus_has_quarter_witness() {
        let e = ScalarExpr::int(2).mul(&ScalarExpr::pi()).mul(&ScalarExpr::coord("t1")).sin();
        let v = ZeroTester::default().is_zero(&e, &torus()).unwrap();
        assert_eq!(v.status, ZeroStatus::NonZero);
        let w = v.witness.unwrap();
        assert_eq!(w.point[0], ("t1".to_string(), 0.25));
        assert!((w.residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn numeric_zero_for_identity_outside_canonical_reach() {
        // sqrt(x^2 + 2x + 1) - (x + 1) vanishes for x > -1 but is not
        // canonically zero.
        let x = ScalarExpr::coord("x");
        let e = (x.powi(2).unwrap() + ScalarExpr::int(2) * x.clone() + ScalarExpr::one()).sqrt()
            - (x + ScalarExpr::one());
        let b = SampleBox::new(vec![("x".into(), 0.1, 3.0)]);
        let v = ZeroTester::default().is_zero(&e, &b).unwrap();
        assert_eq!(v.status, ZeroStatus::NumericZero);
        assert_eq!(v.samples, 64);
    }

    #[test]
    fn empty_domain_is_an_error() {
        let e = ScalarExpr::coord("x").neg().sqrt() + ScalarExpr::one();
        let b = SampleBox::new(vec![("x".into(), 1.0, 2.0)]);
        assert_eq!(ZeroTester::default().is_zero(&e, &b), Err(ExprError::EmptyDomain));
    }

    #[test]
    fn uninterpreted_functions_are_instantiated() {
        let f = ScalarExpr::func("f", 0, &ScalarExpr::coord("t1"));
        let v = ZeroTester::default().is_zero(&f, &torus()).unwrap();
        assert_eq!(v.status, ZeroStatus::NonZero);
        let same = &f - &f;
        assert!(ZeroTester::default().is_zero(&same, &torus()).unwrap().is_symbolic());
    }
}
