//! Infix rendering. The output is valid input for the DSL expression parser,
//! and re-parsing a rendered canonical form reproduces it exactly.

use std::fmt::{self, Write as _};

use num_traits::{One, Signed};

use super::scalar::{Atom, Monomial, ScalarExpr, Q};
use super::{Expr, Function};

fn atom_base(a: &Atom) -> String {
    match a {
        Atom::Coord(c) => c.to_string(),
        Atom::Pi => "pi".into(),
        Atom::Sin(u) => format!("sin({u})"),
        Atom::Cos(u) => format!("cos({u})"),
        Atom::Exp(u) => format!("exp({u})"),
        Atom::Sqrt(u) => format!("sqrt({u})"),
        Atom::Func { name, order, arg } => format!("{name}{}({arg})", "'".repeat(*order as usize)),
    }
}

fn atom_power(a: &Atom, e: i32) -> String {
    let base = atom_base(a);
    if e == 1 {
        base
    } else {
        format!("{base}^{e}")
    }
}

/// Renders `|c| * m` (the sign is handled by the caller).
fn render_term(c: &Q, m: &Monomial) -> String {
    let c = c.abs();
    let pos: Vec<String> = m
        .factors()
        .iter()
        .filter(|(_, e)| *e > 0)
        .map(|(a, e)| atom_power(a, *e))
        .collect();
    let mut neg: Vec<String> = m
        .factors()
        .iter()
        .filter(|(_, e)| *e < 0)
        .map(|(a, e)| atom_power(a, -e))
        .collect();
    let mut out = if pos.is_empty() {
        c.numer().to_string()
    } else if c.numer().is_one() {
        pos.join("*")
    } else {
        format!("{}*{}", c.numer(), pos.join("*"))
    };
    if !c.denom().is_one() {
        neg.insert(0, c.denom().to_string());
    }
    match neg.len() {
        0 => {}
        1 => {
            out.push('/');
            out.push_str(&neg[0]);
        }
        _ => {
            let _ = write!(out, "/({})", neg.join("*"));
        }
    }
    out
}

fn render_sum(e: &ScalarExpr) -> String {
    let mut out = String::new();
    for (i, (m, c)) in e.terms().enumerate() {
        let body = render_term(c, m);
        if i == 0 {
            if c.is_negative() {
                out.push('-');
            }
        } else if c.is_negative() {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        out.push_str(&body);
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let num = render_sum(self);
        if !self.has_denominator() {
            return f.write_str(&num);
        }
        let dens: Vec<(String, u32)> = self
            .denominator()
            .map(|(p, k)| (format!("({})", render_sum(&p)), k))
            .collect();
        let den = dens
            .iter()
            .map(|(s, k)| if *k == 1 { s.clone() } else { format!("{s}^{k}") })
            .collect::<Vec<_>>()
            .join("*");
        let single_term = self.terms().count() == 1;
        if single_term && !num.contains('/') {
            write!(f, "{num}/")?;
        } else {
            write!(f, "({num})/")?;
        }
        if dens.len() == 1 && dens[0].1 == 1 {
            f.write_str(&den)
        } else {
            write!(f, "({den})")
        }
    }
}

const SUM: u8 = 0;
const PRODUCT: u8 = 1;
const POWER: u8 = 3;

pub(super) fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>, ctx: u8) -> fmt::Result {
    match e {
        Expr::Num(q) => {
            let needs = q.is_negative() || !q.is_integer();
            if needs && ctx > SUM {
                write!(f, "({q})")
            } else {
                write!(f, "{q}")
            }
        }
        Expr::Var(v) => f.write_str(v),
        Expr::Pi => f.write_str("pi"),
        Expr::Add(items) => {
            if ctx > SUM {
                f.write_str("(")?;
            }
            for (i, it) in items.iter().enumerate() {
                if i > 0 {
                    f.write_str(" + ")?;
                }
                write_expr(it, f, SUM + 1)?;
            }
            if items.is_empty() {
                f.write_str("0")?;
            }
            if ctx > SUM {
                f.write_str(")")?;
            }
            Ok(())
        }
        Expr::Mul(items) => {
            if ctx > PRODUCT {
                f.write_str("(")?;
            }
            for (i, it) in items.iter().enumerate() {
                if i > 0 {
                    f.write_str("*")?;
                }
                write_expr(it, f, PRODUCT + 1)?;
            }
            if items.is_empty() {
                f.write_str("1")?;
            }
            if ctx > PRODUCT {
                f.write_str(")")?;
            }
            Ok(())
        }
        Expr::Pow(b, k) => {
            write_expr(b, f, POWER + 1)?;
            if *k < 0 {
                write!(f, "^({k})")
            } else {
                write!(f, "^{k}")
            }
        }
        Expr::Call(func, a) => {
            let name = match func {
                Function::Recip => {
                    f.write_str("1/(")?;
                    write_expr(a, f, SUM)?;
                    return f.write_str(")");
                }
                other => other.name(),
            };
            write!(f, "{name}(")?;
            write_expr(a, f, SUM)?;
            f.write_str(")")
        }
    }
}
