//! Numeric evaluation: direct evaluation with domain checks, and a compiled
//! form for the hot loops of the simulator.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use num_traits::ToPrimitive;

use super::scalar::{Atom, ScalarExpr, Q};
use super::{ExprError, Function};

/// Numeric implementation of an uninterpreted function: `(order, x) -> f^(order)(x)`.
pub type UnaryFn = Arc<dyn Fn(u32, f64) -> f64 + Send + Sync>;

/// Numeric definitions for uninterpreted function symbols.
#[derive(Clone, Default)]
pub struct FunctionTable {
    funcs: HashMap<String, UnaryFn>,
}

impl fmt::Debug for FunctionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<_> = self.funcs.keys().collect();
        names.sort();
        f.debug_struct("FunctionTable").field("names", &names).finish()
    }
}

impl FunctionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, f: UnaryFn) {
        self.funcs.insert(name.to_string(), f);
    }

    /// Defines `name(x) = sum_k coeffs[k] x^k` with exact derivatives.
    pub fn insert_polynomial(&mut self, name: &str, coeffs: Vec<f64>) {
        self.insert(
            name,
            Arc::new(move |order, x| {
                let mut acc = 0.0;
                for (k, c) in coeffs.iter().enumerate().rev() {
                    let k = k as u32;
                    if k < order {
                        break;
                    }
                    let falling: f64 = (0..order).map(|j| (k - j) as f64).product();
                    acc += c * falling * x.powi((k - order) as i32);
                }
                acc
            }),
        );
    }

    pub fn insert_constant(&mut self, name: &str, value: f64) {
        self.insert_polynomial(name, vec![value]);
    }

    pub fn get(&self, name: &str) -> Option<&UnaryFn> {
        self.funcs.get(name)
    }
}

/// Coordinate values plus function definitions.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    coords: HashMap<String, f64>,
    funcs: FunctionTable,
}

impl Bindings {
    pub fn new(funcs: FunctionTable) -> Self {
        Bindings {
            coords: HashMap::new(),
            funcs,
        }
    }

    pub fn from_pairs(pairs: &[(&str, f64)]) -> Self {
        let mut b = Bindings::default();
        for (k, v) in pairs {
            b.set(k, *v);
        }
        b
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.coords.insert(name.to_string(), value);
    }

    pub fn coord(&self, name: &str) -> Result<f64, ExprError> {
        self.coords
            .get(name)
            .copied()
            .ok_or_else(|| ExprError::UnboundCoordinate(name.to_string()))
    }

    pub fn functions(&self) -> &FunctionTable {
        &self.funcs
    }
}

pub(crate) fn q_to_f64(q: &Q) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

pub(crate) fn apply_function(f: &Function, x: f64, funcs: &FunctionTable) -> Result<f64, ExprError> {
    Ok(match f {
        Function::Sin => x.sin(),
        Function::Cos => x.cos(),
        Function::Exp => x.exp(),
        Function::Sqrt => {
            if x < 0.0 {
                return Err(ExprError::DomainViolation(format!("sqrt of negative value {x}")));
            }
            x.sqrt()
        }
        Function::Recip => {
            if x == 0.0 {
                return Err(ExprError::DomainViolation("reciprocal of zero".into()));
            }
            1.0 / x
        }
        Function::Named { name, order } => {
            let g = funcs
                .get(name)
                .ok_or_else(|| ExprError::UnboundFunction(name.clone()))?;
            g(*order, x)
        }
    })
}

fn eval_atom(a: &Atom, b: &Bindings) -> Result<f64, ExprError> {
    match a {
        Atom::Coord(c) => b.coord(c),
        Atom::Pi => Ok(std::f64::consts::PI),
        Atom::Sin(u) => Ok(u.eval(b)?.sin()),
        Atom::Cos(u) => Ok(u.eval(b)?.cos()),
        Atom::Exp(u) => Ok(u.eval(b)?.exp()),
        Atom::Sqrt(u) => apply_function(&Function::Sqrt, u.eval(b)?, b.functions()),
        Atom::Func { name, order, arg } => apply_function(
            &Function::Named {
                name: name.to_string(),
                order: *order,
            },
            arg.eval(b)?,
            b.functions(),
        ),
    }
}

fn eval_term(m: &super::Monomial, c: &Q, b: &Bindings) -> Result<f64, ExprError> {
    let mut t = q_to_f64(c);
    for (a, e) in m.factors() {
        let x = eval_atom(a, b)?;
        if *e < 0 && x == 0.0 {
            return Err(ExprError::DomainViolation("reciprocal of zero".into()));
        }
        t *= x.powi(*e);
    }
    Ok(t)
}

impl ScalarExpr {
    /// Numeric value at a point.
    pub fn eval(&self, b: &Bindings) -> Result<f64, ExprError> {
        self.eval_with_scale(b).map(|(v, _)| v)
    }

    /// Value together with a magnitude scale (sum of absolute term values over
    /// the absolute denominator) used for relative zero tolerances.
    pub fn eval_with_scale(&self, b: &Bindings) -> Result<(f64, f64), ExprError> {
        let mut num = 0.0;
        let mut scale = 0.0;
        for (m, c) in self.terms() {
            let t = eval_term(m, c, b)?;
            num += t;
            scale += t.abs();
        }
        let mut den = 1.0;
        for (p, k) in self.denominator() {
            let v = p.eval(b)?;
            den *= v.powi(k as i32);
        }
        if den == 0.0 {
            return Err(ExprError::DomainViolation("denominator vanishes".into()));
        }
        let v = num / den;
        if !v.is_finite() {
            return Err(ExprError::DomainViolation("non-finite value".into()));
        }
        Ok((v, scale / den.abs()))
    }

    /// Compiles for repeated evaluation with coordinates given by position.
    pub fn compile(&self, coords: &[String], funcs: &FunctionTable) -> Result<Compiled, ExprError> {
        Ok(Compiled(compile_expr(self, coords, funcs)?))
    }
}

/// Expression compiled against a fixed coordinate order. Domain violations
/// surface as non-finite results rather than errors.
#[derive(Clone)]
pub struct Compiled(Node);

impl fmt::Debug for Compiled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Compiled(..)")
    }
}

#[derive(Clone)]
enum Node {
    Const(f64),
    Var(usize),
    Sum(Vec<Node>),
    Prod(Vec<Node>),
    PowI(Box<Node>, i32),
    Div(Box<Node>, Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Exp(Box<Node>),
    Sqrt(Box<Node>),
    Func(UnaryFn, u32, Box<Node>),
}

impl Compiled {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0.eval(x)
    }

    pub fn constant(v: f64) -> Self {
        Compiled(Node::Const(v))
    }

    /// True when the compiled expression is the constant zero.
    pub fn is_zero(&self) -> bool {
        matches!(self.0, Node::Const(v) if v == 0.0)
    }
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(i) => x[*i],
            Node::Sum(items) => items.iter().map(|n| n.eval(x)).sum(),
            Node::Prod(items) => items.iter().fold(1.0, |acc, n| acc * n.eval(x)),
            Node::PowI(b, k) => b.eval(x).powi(*k),
            Node::Div(a, b) => a.eval(x) / b.eval(x),
            Node::Sin(a) => a.eval(x).sin(),
            Node::Cos(a) => a.eval(x).cos(),
            Node::Exp(a) => a.eval(x).exp(),
            Node::Sqrt(a) => a.eval(x).sqrt(),
            Node::Func(f, k, a) => f(*k, a.eval(x)),
        }
    }
}

fn compile_atom(a: &Atom, coords: &[String], funcs: &FunctionTable) -> Result<Node, ExprError> {
    Ok(match a {
        Atom::Coord(c) => Node::Var(
            coords
                .iter()
                .position(|n| n.as_str() == &**c)
                .ok_or_else(|| ExprError::UnboundCoordinate(c.to_string()))?,
        ),
        Atom::Pi => Node::Const(std::f64::consts::PI),
        Atom::Sin(u) => Node::Sin(Box::new(compile_expr(u, coords, funcs)?)),
        Atom::Cos(u) => Node::Cos(Box::new(compile_expr(u, coords, funcs)?)),
        Atom::Exp(u) => Node::Exp(Box::new(compile_expr(u, coords, funcs)?)),
        Atom::Sqrt(u) => Node::Sqrt(Box::new(compile_expr(u, coords, funcs)?)),
        Atom::Func { name, order, arg } => {
            let f = funcs
                .get(name)
                .ok_or_else(|| ExprError::UnboundFunction(name.to_string()))?
                .clone();
            Node::Func(f, *order, Box::new(compile_expr(arg, coords, funcs)?))
        }
    })
}

fn compile_expr(e: &ScalarExpr, coords: &[String], funcs: &FunctionTable) -> Result<Node, ExprError> {
    let mut terms = Vec::new();
    for (m, c) in e.terms() {
        let mut factors = Vec::new();
        let cv = q_to_f64(c);
        for (a, k) in m.factors() {
            let base = compile_atom(a, coords, funcs)?;
            factors.push(if *k == 1 { base } else { Node::PowI(Box::new(base), *k) });
        }
        let term = if factors.is_empty() {
            Node::Const(cv)
        } else {
            if cv != 1.0 {
                factors.insert(0, Node::Const(cv));
            }
            if factors.len() == 1 {
                factors.pop().unwrap()
            } else {
                Node::Prod(factors)
            }
        };
        terms.push(term);
    }
    let num = match terms.len() {
        0 => Node::Const(0.0),
        1 => terms.pop().unwrap(),
        _ => Node::Sum(terms),
    };
    if !e.has_denominator() {
        return Ok(num);
    }
    let mut dens = Vec::new();
    for (p, k) in e.denominator() {
        let n = compile_expr(&p, coords, funcs)?;
        dens.push(if k == 1 { n } else { Node::PowI(Box::new(n), k as i32) });
    }
    let den = if dens.len() == 1 { dens.pop().unwrap() } else { Node::Prod(dens) };
    Ok(Node::Div(Box::new(num), Box::new(den)))
}
