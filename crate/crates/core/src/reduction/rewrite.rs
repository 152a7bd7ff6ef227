//! Re-expressing source-chart expressions through the components of a map,
//! and sampling pairs of points on a common fibre.

use nalgebra::{DMatrix, DVector};
use num_traits::One;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::expr::{Atom, Bindings, Monomial, Q, ScalarExpr};
use crate::operator::project_to_level;

use super::QuotientMap;

enum Rule {
    /// The component is `sqrt(arg)`.
    Root { arg: ScalarExpr, target: usize },
    /// `coef * var^degree + rest` equals `image`, `rest` free of `var`.
    Power {
        var: String,
        degree: i32,
        coef: Q,
        rest: ScalarExpr,
        image: ScalarExpr,
    },
}

fn placeholder(j: usize) -> String {
    format!("\u{1}t{j}")
}

fn root_rule(component: &ScalarExpr, target: usize) -> Option<Rule> {
    if component.has_denominator() {
        return None;
    }
    let mut terms = component.terms();
    let (m, c) = terms.next()?;
    if terms.next().is_some() || !c.is_one() {
        return None;
    }
    match m.factors() {
        [(Atom::Sqrt(arg), 1)] => Some(Rule::Root {
            arg: arg.clone(),
            target,
        }),
        _ => None,
    }
}

fn power_rules(component: &ScalarExpr, image: &ScalarExpr) -> Vec<Rule> {
    let mut out = Vec::new();
    if component.has_denominator() {
        return out;
    }
    for var in component.free_coords() {
        let mut hit: Option<(i32, Q)> = None;
        let mut rest = ScalarExpr::zero();
        let mut ok = true;
        for (m, c) in component.terms() {
            let mut deg = 0;
            for (a, e) in m.factors() {
                match a {
                    Atom::Coord(name) if name.as_ref() == var => deg = *e,
                    other if other.depends_on(&var) => ok = false,
                    _ => {}
                }
            }
            if deg == 0 {
                rest = rest.add(&ScalarExpr::from_term(c.clone(), m.clone()));
                continue;
            }
            let is_pure_power = m.factors().len() == 1;
            if hit.is_some() || !is_pure_power || deg < 1 {
                ok = false;
            }
            hit = Some((deg, c.clone()));
        }
        if let (true, Some((degree, coef))) = (ok, hit) {
            out.push(Rule::Power {
                var,
                degree,
                coef,
                rest,
                image: image.clone(),
            });
        }
    }
    out
}

struct Rewriter<'a> {
    rules: Vec<&'a Rule>,
}

impl Rewriter<'_> {
    fn target(&self, j: usize) -> ScalarExpr {
        ScalarExpr::coord(&placeholder(j))
    }

    fn expr(&self, e: &ScalarExpr) -> Option<ScalarExpr> {
        for rule in &self.rules {
            if let Rule::Root { arg, target } = rule {
                if e == arg {
                    return self.target(*target).powi(2);
                }
            }
        }
        let mut acc = ScalarExpr::zero();
        for (m, c) in e.terms() {
            let mut term = ScalarExpr::constant(c.clone());
            for (a, k) in m.factors() {
                term = term.mul(&self.factor(a, *k)?);
            }
            acc = acc.add(&term);
        }
        for (p, k) in e.denominator() {
            let d = self.expr(&p)?.powi(k as i32)?;
            acc = acc.div(&d)?;
        }
        Some(acc)
    }

    fn factor(&self, a: &Atom, k: i32) -> Option<ScalarExpr> {
        for rule in &self.rules {
            match rule {
                Rule::Root { arg, target } => {
                    if matches!(a, Atom::Sqrt(u) if u == arg) {
                        return self.target(*target).powi(k);
                    }
                }
                Rule::Power {
                    var,
                    degree,
                    coef,
                    rest,
                    image,
                } => {
                    if matches!(a, Atom::Coord(n) if n.as_ref() == var) {
                        let q = k.div_euclid(*degree);
                        let r = k.rem_euclid(*degree);
                        if q == 0 {
                            continue;
                        }
                        let solved = image
                            .sub(rest)
                            .mul(&ScalarExpr::constant(coef.recip()));
                        let base = solved.powi(q)?;
                        return Some(base.mul(&ScalarExpr::coord(var).powi(r)?));
                    }
                }
            }
        }
        let rebuilt = match a {
            Atom::Coord(_) | Atom::Pi => ScalarExpr::from_term(Q::one(), Monomial::atom(a.clone(), 1)),
            Atom::Sin(u) => self.expr(u)?.sin(),
            Atom::Cos(u) => self.expr(u)?.cos(),
            Atom::Exp(u) => self.expr(u)?.exp(),
            Atom::Sqrt(u) => self.expr(u)?.sqrt(),
            Atom::Func { name, order, arg } => ScalarExpr::func(name, *order, &self.expr(arg)?),
        };
        rebuilt.powi(k)
    }
}

/// Tries to write `e` (over the source chart) as an expression in the target
/// coordinates alone.
pub(crate) fn rewrite_in_target(e: &ScalarExpr, map: &QuotientMap) -> Option<ScalarExpr> {
    let targets = map.target.names();
    let finish = |v: ScalarExpr| -> Option<ScalarExpr> {
        let allowed: Vec<String> = (0..targets.len()).map(placeholder).collect();
        if v.free_coords().iter().all(|c| allowed.contains(c)) {
            Some(v.substitute(&|name: &str| {
                allowed
                    .iter()
                    .position(|a| a == name)
                    .map(|j| ScalarExpr::coord(&targets[j]))
            }))
        } else {
            None
        }
    };
    if e.free_coords().is_empty() {
        return Some(e.clone());
    }
    let roots: Vec<Rule> = map
        .components
        .iter()
        .enumerate()
        .filter_map(|(j, c)| root_rule(c, j))
        .collect();
    let mut powers: Vec<Vec<Rule>> = Vec::new();
    for (j, c) in map.components.iter().enumerate() {
        let t = ScalarExpr::coord(&placeholder(j));
        match root_rule(c, j) {
            Some(Rule::Root { arg, .. }) => powers.push(power_rules(&arg, &t.mul(&t))),
            _ => powers.push(power_rules(c, &t)),
        }
    }
    // One power rule per component, tried in every combination.
    let mut choices: Vec<Vec<&Rule>> = vec![Vec::new()];
    for options in &powers {
        if options.is_empty() {
            continue;
        }
        let mut next = Vec::new();
        for prefix in &choices {
            for o in options {
                let mut p = prefix.clone();
                p.push(o);
                next.push(p);
            }
        }
        choices = next;
        if choices.len() > 64 {
            break;
        }
    }
    for choice in choices {
        let mut rules: Vec<&Rule> = roots.iter().collect();
        rules.extend(choice);
        let rw = Rewriter { rules };
        if let Some(v) = rw.expr(e).and_then(finish) {
            return Some(v);
        }
    }
    None
}

/// Pair of distinct source points with equal image under the map.
pub(crate) struct FiberSampler<'a> {
    map: &'a QuotientMap,
    grads: Vec<Vec<ScalarExpr>>,
    funcs: Bindings,
}

impl<'a> FiberSampler<'a> {
    pub(crate) fn new(map: &'a QuotientMap, funcs: Bindings) -> Self {
        let names = map.source.names();
        let grads = map
            .components
            .iter()
            .map(|c| names.iter().map(|n| c.diff(n)).collect())
            .collect();
        FiberSampler { map, grads, funcs }
    }

    fn image(&self, x: &[f64]) -> Option<Vec<f64>> {
        let b = self.bindings(x);
        self.map.components.iter().map(|c| c.eval(&b).ok()).collect()
    }

    fn bindings(&self, x: &[f64]) -> Bindings {
        let mut b = self.funcs.clone();
        for (c, v) in self.map.source.coords.iter().zip(x) {
            b.set(&c.name, *v);
        }
        b
    }

    fn project(&self, start: &[f64], level: &[f64]) -> Option<Vec<f64>> {
        project_to_level(
            &self.map.source,
            &self.map.components,
            &self.grads,
            level,
            start,
            &self.funcs,
            1e-10,
        )
    }

    /// Tangent step orthogonal to the gradients of the components.
    fn tangent_step(&self, x: &[f64], rng: &mut impl Rng) -> Option<Vec<f64>> {
        let n = x.len();
        let b = self.bindings(x);
        let m = self.grads.len();
        let mut jac = DMatrix::zeros(m, n);
        for (j, row) in self.grads.iter().enumerate() {
            for (k, g) in row.iter().enumerate() {
                jac[(j, k)] = g.eval(&b).ok()?;
            }
        }
        let dir = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let jt = jac.transpose();
        let coef = (&jac * &jt).svd(true, true).solve(&(&jac * &dir), 1e-14).ok()?;
        let t = dir - jt * coef;
        let norm = t.norm();
        if norm < 1e-12 {
            return None;
        }
        Some(t.iter().map(|v| v / norm).collect())
    }

    /// The deterministic first pair: the box's low corner and its quarter
    /// point moved onto the same fibre.
    pub(crate) fn corner_pair(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let boxed = self.map.source.sample_box();
        let x: Vec<f64> = boxed.coords.iter().map(|(_, lo, _)| *lo).collect();
        let level = self.image(&x)?;
        let y = self.project(&boxed.quarter_point(), &level)?;
        distinct(&x, &y).then_some((x, y))
    }

    /// Random source point, then a short walk along its fibre.
    pub(crate) fn random_pair(&self, rng: &mut impl Rng, budget: &mut usize) -> Option<(Vec<f64>, Vec<f64>)> {
        let boxed = self.map.source.sample_box();
        let x = boxed.sample(rng);
        let level = self.image(&x)?;
        if level.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut y = x.clone();
        let scale = boxed
            .coords
            .iter()
            .map(|(_, lo, hi)| hi - lo)
            .fold(f64::INFINITY, f64::min)
            * 0.3;
        for _ in 0..4 {
            if *budget == 0 {
                return None;
            }
            *budget -= 1;
            let t = self.tangent_step(&y, rng)?;
            let trial: Vec<f64> = y.iter().zip(&t).map(|(a, b)| a + scale * b).collect();
            y = self.project(&trial, &level)?;
        }
        distinct(&x, &y).then_some((x, y))
    }
}

fn distinct(x: &[f64], y: &[f64]) -> bool {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) > 1e-3
}
