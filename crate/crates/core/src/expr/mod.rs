//! Symbolic scalar expressions over named chart coordinates.
//!
//! Two representations live here. [`Expr`] is the surface tree produced by
//! the parser and builders; [`ScalarExpr`] is the canonical rational-function
//! form every other module computes with. [`simplify`] maps one tree to the
//! tree of its canonical form.

mod eval;
mod render;
mod scalar;
mod zero;

use std::fmt;

use thiserror::Error;

pub use eval::{Bindings, Compiled, FunctionTable, UnaryFn};
pub use scalar::{Atom, Monomial, ScalarExpr, Q};
pub use zero::{SampleBox, ZeroStatus, ZeroTester, ZeroVerdict, ZeroWitness};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("unknown coordinate `{0}`")]
    UnknownCoordinate(String),
    #[error("coordinate `{0}` is not bound")]
    UnboundCoordinate(String),
    #[error("function `{0}` has no numeric definition")]
    UnboundFunction(String),
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("no feasible sample point found in the sampling box")]
    EmptyDomain,
    #[error("sample count must be at least 1")]
    NoSamples,
}

/// Elementary and uninterpreted functions of one argument.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Function {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Recip,
    /// Opaque function symbol, `order` counts derivatives taken.
    Named { name: String, order: u32 },
}

impl Function {
    pub fn name(&self) -> String {
        match self {
            Function::Sin => "sin".into(),
            Function::Cos => "cos".into(),
            Function::Exp => "exp".into(),
            Function::Sqrt => "sqrt".into(),
            Function::Recip => "recip".into(),
            Function::Named { name, order } => format!("{name}{}", "'".repeat(*order as usize)),
        }
    }
}

/// Expression tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(Q),
    Var(String),
    Pi,
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Pow(Box<Expr>, i32),
    Call(Function, Box<Expr>),
}

impl Expr {
    pub fn int(n: i64) -> Expr {
        Expr::Num(Q::from_integer(n.into()))
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn neg(self) -> Expr {
        Expr::Mul(vec![Expr::int(-1), self])
    }

    pub fn pow(self, k: i32) -> Expr {
        Expr::Pow(Box::new(self), k)
    }

    pub fn call(f: Function, arg: Expr) -> Expr {
        Expr::Call(f, Box::new(arg))
    }

    pub fn div(self, other: Expr) -> Expr {
        Expr::Mul(vec![self, other.pow(-1)])
    }

    /// Canonical form of the tree.
    pub fn to_scalar(&self) -> Result<ScalarExpr, ExprError> {
        Ok(match self {
            Expr::Num(q) => ScalarExpr::constant(q.clone()),
            Expr::Var(v) => ScalarExpr::coord(v),
            Expr::Pi => ScalarExpr::pi(),
            Expr::Add(items) => {
                let mut acc = ScalarExpr::zero();
                for e in items {
                    acc = acc.add(&e.to_scalar()?);
                }
                acc
            }
            Expr::Mul(items) => {
                let mut acc = ScalarExpr::one();
                for e in items {
                    acc = acc.mul(&e.to_scalar()?);
                }
                acc
            }
            Expr::Pow(b, k) => b.to_scalar()?.powi(*k).ok_or(ExprError::DivisionByZero)?,
            Expr::Call(f, a) => {
                let a = a.to_scalar()?;
                match f {
                    Function::Sin => a.sin(),
                    Function::Cos => a.cos(),
                    Function::Exp => a.exp(),
                    Function::Sqrt => a.sqrt(),
                    Function::Recip => a.recip().ok_or(ExprError::DivisionByZero)?,
                    Function::Named { name, order } => ScalarExpr::func(name, *order, &a),
                }
            }
        })
    }

    /// Numeric value at a point; fails on unbound names and domain violations.
    pub fn eval(&self, b: &Bindings) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Num(q) => eval::q_to_f64(q),
            Expr::Var(v) => b.coord(v)?,
            Expr::Pi => std::f64::consts::PI,
            Expr::Add(items) => {
                let mut s = 0.0;
                for e in items {
                    s += e.eval(b)?;
                }
                s
            }
            Expr::Mul(items) => {
                let mut s = 1.0;
                for e in items {
                    s *= e.eval(b)?;
                }
                s
            }
            Expr::Pow(base, k) => {
                let x = base.eval(b)?;
                if *k < 0 && x == 0.0 {
                    return Err(ExprError::DomainViolation("reciprocal of zero".into()));
                }
                x.powi(*k)
            }
            Expr::Call(f, a) => {
                let x = a.eval(b)?;
                eval::apply_function(f, x, b.functions())?
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::DomainViolation("non-finite value".into()))
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        render::write_expr(self, f, 0)
    }
}

/// Canonical simplification of an expression tree.
pub fn simplify(e: &Expr) -> Result<Expr, ExprError> {
    Ok(e.to_scalar()?.to_expr())
}

/// Partial derivative of `e` with respect to `coord`, which must be one of
/// `coords` (the chart the expression lives on).
pub fn differentiate(e: &ScalarExpr, coord: &str, coords: &[String]) -> Result<ScalarExpr, ExprError> {
    if !coords.iter().any(|c| c == coord) {
        return Err(ExprError::UnknownCoordinate(coord.to_string()));
    }
    for c in e.free_coords() {
        if !coords.contains(&c) {
            return Err(ExprError::UnknownCoordinate(c));
        }
    }
    Ok(e.diff(coord))
}

impl ScalarExpr {
    /// Tree form of the canonical value.
    pub fn to_expr(&self) -> Expr {
        let mut sum = Vec::new();
        for (m, c) in self.terms() {
            let mut factors = vec![Expr::Num(c.clone())];
            for (a, e) in m.factors() {
                let base = atom_expr(a);
                factors.push(if *e == 1 { base } else { base.pow(*e) });
            }
            sum.push(if factors.len() == 1 {
                factors.pop().unwrap()
            } else {
                Expr::Mul(factors)
            });
        }
        let num = match sum.len() {
            0 => Expr::int(0),
            1 => sum.pop().unwrap(),
            _ => Expr::Add(sum),
        };
        if !self.has_denominator() {
            return num;
        }
        let mut factors = vec![num];
        for (p, k) in self.denominator() {
            factors.push(p.to_expr().pow(-(k as i32)));
        }
        Expr::Mul(factors)
    }
}

fn atom_expr(a: &Atom) -> Expr {
    match a {
        Atom::Coord(c) => Expr::Var(c.to_string()),
        Atom::Pi => Expr::Pi,
        Atom::Sin(u) => Expr::call(Function::Sin, u.to_expr()),
        Atom::Cos(u) => Expr::call(Function::Cos, u.to_expr()),
        Atom::Exp(u) => Expr::call(Function::Exp, u.to_expr()),
        Atom::Sqrt(u) => Expr::call(Function::Sqrt, u.to_expr()),
        Atom::Func { name, order, arg } => Expr::call(
            Function::Named {
                name: name.to_string(),
                order: *order,
            },
            arg.to_expr(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(n: &str) -> Expr {
        Expr::var(n)
    }

    #[test]
    fn simplify_examples() {
        let xy = Expr::Mul(vec![v("x"), v("y")]);
        let yx = Expr::Mul(vec![v("y"), v("x")]);
        let e = Expr::Add(vec![xy, yx.neg()]);
        assert_eq!(simplify(&e).unwrap(), Expr::int(0));

        let t = v("theta");
        let e = Expr::Add(vec![
            Expr::call(Function::Sin, t.clone()).pow(2),
            Expr::call(Function::Cos, t).pow(2),
        ]);
        assert_eq!(simplify(&e).unwrap(), Expr::int(1));

        let s = Expr::Add(vec![v("x").pow(2), v("y").pow(2)]);
        let e = Expr::Mul(vec![s.clone(), Expr::call(Function::Recip, s)]);
        assert_eq!(simplify(&e).unwrap(), Expr::int(1));
    }

    #[test]
    fn simplify_reports_symbolic_division_by_zero() {
        let e = Expr::int(1).div(Expr::Add(vec![v("x"), v("x").neg()]));
        assert_eq!(simplify(&e), Err(ExprError::DivisionByZero));
    }

    #[test]
    fn differentiate_examples() {
        let coords: Vec<String> = ["x", "y"].iter().map(|s| s.to_string()).collect();
        let e = Expr::Mul(vec![v("x").pow(2), v("y")]).to_scalar().unwrap();
        let d = differentiate(&e, "x", &coords).unwrap();
        assert_eq!(d, ScalarExpr::int(2) * ScalarExpr::coord("x") * ScalarExpr::coord("y"));

        let polar: Vec<String> = ["r", "theta"].iter().map(|s| s.to_string()).collect();
        let a = ScalarExpr::func("a", 0, &ScalarExpr::coord("r"));
        assert!(differentiate(&a, "theta", &polar).unwrap().is_zero());

        assert_eq!(
            differentiate(&e, "z", &coords),
            Err(ExprError::UnknownCoordinate("z".into()))
        );
    }

    #[test]
    fn gaussian_density_derivative_matches_finite_differences() {
        // d/dr (2 c r e^{-c r^2}) with c = 1 against central differences.
        let r = ScalarExpr::coord("r");
        let f = ScalarExpr::int(2) * r.clone() * (r.powi(2).unwrap().neg()).exp();
        let df = f.diff("r");
        let expected = ScalarExpr::int(2)
            * (r.powi(2).unwrap().neg()).exp()
            * (ScalarExpr::one() - ScalarExpr::int(2) * r.powi(2).unwrap());
        assert_eq!(df, expected);
        for &x in &[0.3, 1.0, 2.0] {
            let h = 1e-6;
            let fd = (2.0 * (x + h) * (-(x + h) * (x + h) as f64).exp()
                - 2.0 * (x - h) * (-(x - h) * (x - h) as f64).exp())
                / (2.0 * h);
            let got = df.eval(&Bindings::from_pairs(&[("r", x)])).unwrap();
            assert!((got - fd).abs() <= 1e-6 * fd.abs().max(1e-12), "r={x}: {got} vs {fd}");
        }
    }

    #[test]
    fn eval_examples() {
        let e = Expr::Add(vec![v("x").pow(2), v("y").pow(2)]);
        let b = Bindings::from_pairs(&[("x", 3.0), ("y", 4.0)]);
        assert_eq!(e.eval(&b).unwrap(), 25.0);

        let e = Expr::Mul(vec![
            Expr::int(2),
            v("r"),
            Expr::call(Function::Exp, v("r").pow(2).neg()),
        ]);
        let got = e.eval(&Bindings::from_pairs(&[("r", 1.0)])).unwrap();
        assert!((got - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((got - 0.735758882).abs() < 1e-9);

        let e = v("r").pow(-1);
        assert!(matches!(
            e.eval(&Bindings::from_pairs(&[("r", 0.0)])),
            Err(ExprError::DomainViolation(_))
        ));
        assert!(matches!(
            e.to_scalar().unwrap().eval(&Bindings::from_pairs(&[("r", 0.0)])),
            Err(ExprError::DomainViolation(_))
        ));
        assert_eq!(
            v("q").eval(&Bindings::default()),
            Err(ExprError::UnboundCoordinate("q".into()))
        );
    }
}
