//! Canonical rational-function representation of scalar expressions.
//!
//! A [`ScalarExpr`] is a quotient `N / D` where
//!
//! * `N` is a Laurent polynomial over *atoms* (coordinates, `pi`, and the
//!   elementary functions applied to canonical arguments) with exact rational
//!   coefficients, and
//! * `D` is a product of powers of primitive polynomial factors that carry no
//!   monomial or constant content.
//!
//! Every constructor and arithmetic operation returns a value already in
//! canonical form, so structural equality is the symbolic equality test used
//! throughout the crate. Monomials obey these reduction rules:
//!
//! * `sqrt(u)` appears with exponent exactly 1 (`sqrt(u)^2 -> u`);
//! * `sin(u)` never appears with exponent >= 2 (`sin(u)^2 -> 1 - cos(u)^2`);
//! * at most one `exp` atom, with exponent 1 (`exp(u) exp(v) -> exp(u + v)`).
//!
//! Cancellation against denominator factors is exact polynomial division in the
//! free atom ring; identities that need more than that fall through to the
//! numeric zero test in [`super::zero`].

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational coefficient.
pub type Q = BigRational;

/// Indivisible factor of a monomial.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Coord(Arc<str>),
    Pi,
    Sin(ScalarExpr),
    Cos(ScalarExpr),
    Exp(ScalarExpr),
    Sqrt(ScalarExpr),
    /// Uninterpreted one-argument function `name^(order)(arg)`.
    Func {
        name: Arc<str>,
        order: u32,
        arg: ScalarExpr,
    },
}

impl Atom {
    pub(crate) fn depends_on(&self, coord: &str) -> bool {
        match self {
            Atom::Coord(c) => &**c == coord,
            Atom::Pi => false,
            Atom::Sin(u) | Atom::Cos(u) | Atom::Exp(u) | Atom::Sqrt(u) => u.depends_on(coord),
            Atom::Func { arg, .. } => arg.depends_on(coord),
        }
    }

    fn collect_coords(&self, out: &mut std::collections::BTreeSet<Arc<str>>) {
        match self {
            Atom::Coord(c) => {
                out.insert(c.clone());
            }
            Atom::Pi => {}
            Atom::Sin(u) | Atom::Cos(u) | Atom::Exp(u) | Atom::Sqrt(u) => u.collect_coords(out),
            Atom::Func { arg, .. } => arg.collect_coords(out),
        }
    }

    fn collect_funcs(&self, out: &mut std::collections::BTreeSet<Arc<str>>) {
        match self {
            Atom::Coord(_) | Atom::Pi => {}
            Atom::Sin(u) | Atom::Cos(u) | Atom::Exp(u) | Atom::Sqrt(u) => u.collect_funcs(out),
            Atom::Func { name, arg, .. } => {
                out.insert(name.clone());
                arg.collect_funcs(out);
            }
        }
    }
}

/// Product of atoms with nonzero integer exponents, sorted by atom.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(Vec<(Atom, i32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn atom(atom: Atom, exp: i32) -> Self {
        if exp == 0 {
            Monomial::one()
        } else {
            Monomial(vec![(atom, exp)])
        }
    }

    pub fn factors(&self) -> &[(Atom, i32)] {
        &self.0
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                Ordering::Less => {
                    out.push(self.0[i].clone());
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(other.0[j].clone());
                    j += 1;
                }
                Ordering::Equal => {
                    let e = self.0[i].1 + other.0[j].1;
                    if e != 0 {
                        out.push((self.0[i].0.clone(), e));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }

    fn inv(&self) -> Monomial {
        Monomial(self.0.iter().map(|(a, e)| (a.clone(), -e)).collect())
    }

    fn is_reduced(&self) -> bool {
        let mut exps = 0;
        for (a, e) in &self.0 {
            match a {
                Atom::Sqrt(_) if *e != 1 => return false,
                Atom::Sin(_) if *e >= 2 => return false,
                Atom::Exp(_) => {
                    exps += 1;
                    if *e != 1 || exps > 1 {
                        return false;
                    }
                }
                _ => {}
            }
        }
        true
    }

    fn has_negative(&self) -> bool {
        self.0.iter().any(|(_, e)| *e < 0)
    }

    /// Divides `self` by `other` if every exponent stays nonnegative.
    fn try_div(&self, other: &Monomial) -> Option<Monomial> {
        let q = self.mul(&other.inv());
        if q.has_negative() {
            None
        } else {
            Some(q)
        }
    }

    /// Pure lexicographic monomial order over the atom order.
    fn lex_cmp(&self, other: &Monomial) -> Ordering {
        let (mut i, mut j) = (0, 0);
        loop {
            match (self.0.get(i), other.0.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some((_, e)), None) => return e.cmp(&0),
                (None, Some((_, e))) => return 0.cmp(e),
                (Some((a, ea)), Some((b, eb))) => match a.cmp(b) {
                    Ordering::Less => return ea.cmp(&0),
                    Ordering::Greater => return 0.cmp(eb),
                    Ordering::Equal => {
                        if ea != eb {
                            return ea.cmp(eb);
                        }
                        i += 1;
                        j += 1;
                    }
                },
            }
        }
    }

    fn without(&self, pred: impl Fn(&Atom, i32) -> bool) -> (Monomial, Vec<(Atom, i32)>) {
        let mut keep = Vec::new();
        let mut taken = Vec::new();
        for (a, e) in &self.0 {
            if pred(a, *e) {
                taken.push((a.clone(), *e));
            } else {
                keep.push((a.clone(), *e));
            }
        }
        (Monomial(keep), taken)
    }
}

pub(crate) type Poly = BTreeMap<Monomial, Q>;

fn poly_add_term(p: &mut Poly, m: Monomial, c: Q) {
    if c.is_zero() {
        return;
    }
    match p.entry(m) {
        std::collections::btree_map::Entry::Vacant(v) => {
            v.insert(c);
        }
        std::collections::btree_map::Entry::Occupied(mut o) => {
            let s = o.get() + c;
            if s.is_zero() {
                o.remove();
            } else {
                *o.get_mut() = s;
            }
        }
    }
}

fn poly_add(a: &Poly, b: &Poly) -> Poly {
    let mut out = a.clone();
    for (m, c) in b {
        poly_add_term(&mut out, m.clone(), c.clone());
    }
    out
}

fn poly_mul_raw(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ma, ca) in a {
        for (mb, cb) in b {
            poly_add_term(&mut out, ma.mul(mb), ca * cb);
        }
    }
    out
}

fn poly_scale(p: &Poly, c: &Q, m: &Monomial) -> Poly {
    let mut out = Poly::new();
    for (pm, pc) in p {
        poly_add_term(&mut out, pm.mul(m), pc * c);
    }
    out
}

fn leading(p: &Poly) -> Option<(&Monomial, &Q)> {
    p.iter().max_by(|a, b| a.0.lex_cmp(b.0))
}

fn is_constant_poly(p: &Poly) -> bool {
    p.len() == 1 && p.keys().next().map(Monomial::is_one).unwrap_or(false)
}

/// Exact division `n / d` in the free atom ring, if it exists.
fn poly_exact_div(n: &Poly, d: &Poly) -> Option<Poly> {
    // Shift the Laurent numerator into the polynomial ring first.
    let mut shift: Vec<(Atom, i32)> = Vec::new();
    for m in n.keys() {
        for (a, e) in &m.0 {
            if *e < 0 {
                match shift.iter_mut().find(|(b, _)| b == a) {
                    Some(entry) => entry.1 = entry.1.max(-e),
                    None => shift.push((a.clone(), -e)),
                }
            }
        }
    }
    shift.sort_by(|x, y| x.0.cmp(&y.0));
    let shift = Monomial(shift);
    let mut rem = poly_scale(n, &Q::one(), &shift);
    let (dl_m, dl_c) = leading(d)?;
    let (dl_m, dl_c) = (dl_m.clone(), dl_c.clone());
    let mut quot = Poly::new();
    let mut budget = 20_000usize;
    while !rem.is_empty() {
        budget = budget.checked_sub(1)?;
        let (rm, rc) = leading(&rem).map(|(m, c)| (m.clone(), c.clone()))?;
        let qm = rm.try_div(&dl_m)?;
        let qc = rc / &dl_c;
        let sub = poly_scale(d, &(-qc.clone()), &qm);
        rem = poly_add(&rem, &sub);
        poly_add_term(&mut quot, qm, qc);
    }
    Some(poly_scale(&quot, &Q::one(), &shift.inv()))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Inner {
    num: Poly,
    den: BTreeMap<Poly, u32>,
}

/// Canonical symbolic scalar (see module docs). Immutable and cheap to clone.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScalarExpr(Arc<Inner>);

impl fmt::Debug for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarExpr({self})")
    }
}

impl Default for ScalarExpr {
    fn default() -> Self {
        ScalarExpr::zero()
    }
}

fn integer_sqrt(n: &BigInt) -> Option<BigInt> {
    if n.is_negative() {
        return None;
    }
    let r = n.sqrt();
    if &(&r * &r) == n {
        Some(r)
    } else {
        None
    }
}

/// Splits a positive integer into `s^2 * f` with `f` free of small square factors.
fn square_split(n: &BigInt) -> (BigInt, BigInt) {
    let mut s = BigInt::one();
    let mut f = n.clone();
    let mut p = BigInt::from(2);
    let limit = BigInt::from(10_000);
    while &p * &p <= f && p < limit {
        let pp = &p * &p;
        while (&f % &pp).is_zero() {
            f /= &pp;
            s *= &p;
        }
        p += 1;
    }
    if let Some(r) = integer_sqrt(&f) {
        s *= &r;
        f = BigInt::one();
    }
    (s, f)
}

impl ScalarExpr {
    fn from_parts(num: Poly, den: BTreeMap<Poly, u32>) -> Self {
        ScalarExpr(Arc::new(Inner { num, den }))
    }

    pub fn zero() -> Self {
        Self::from_parts(Poly::new(), BTreeMap::new())
    }

    pub fn one() -> Self {
        Self::constant(Q::one())
    }

    pub fn constant(q: Q) -> Self {
        let mut num = Poly::new();
        poly_add_term(&mut num, Monomial::one(), q);
        Self::from_parts(num, BTreeMap::new())
    }

    pub fn int(n: i64) -> Self {
        Self::constant(Q::from_integer(BigInt::from(n)))
    }

    pub fn ratio(n: i64, d: i64) -> Self {
        Self::constant(Q::new(BigInt::from(n), BigInt::from(d)))
    }

    /// Exact rational image of a finite double.
    pub fn from_f64(v: f64) -> Option<Self> {
        Q::from_float(v).map(Self::constant)
    }

    pub fn coord(name: &str) -> Self {
        Self::from_atom(Atom::Coord(Arc::from(name)))
    }

    pub fn pi() -> Self {
        Self::from_atom(Atom::Pi)
    }

    fn from_atom(atom: Atom) -> Self {
        let mut num = Poly::new();
        num.insert(Monomial::atom(atom, 1), Q::one());
        Self::from_parts(num, BTreeMap::new())
    }

    /// Builds `c * m`, applying the monomial reduction rules.
    pub(crate) fn from_term(c: Q, m: Monomial) -> Self {
        let mut p = Poly::new();
        poly_add_term(&mut p, m, c);
        reduce(p)
    }

    /// Equality of values; structural equality can miss differently
    /// factored denominators.
    pub fn equivalent(&self, other: &ScalarExpr) -> bool {
        self == other || self.sub(other).is_zero()
    }

    pub fn is_zero(&self) -> bool {
        self.0.num.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.as_constant().map(|c| c.is_one()).unwrap_or(false)
    }

    /// The exact value if this expression is a rational constant.
    pub fn as_constant(&self) -> Option<Q> {
        if !self.0.den.is_empty() {
            return None;
        }
        match self.0.num.len() {
            0 => Some(Q::zero()),
            1 => {
                let (m, c) = self.0.num.iter().next().unwrap();
                m.is_one().then(|| c.clone())
            }
            _ => None,
        }
    }

    /// Numerator terms.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Q)> {
        self.0.num.iter()
    }

    /// Denominator factors with multiplicities; each factor is a canonical
    /// polynomial expression.
    pub fn denominator(&self) -> impl Iterator<Item = (ScalarExpr, u32)> + '_ {
        self.0
            .den
            .iter()
            .map(|(p, k)| (ScalarExpr::from_parts(p.clone(), BTreeMap::new()), *k))
    }

    pub fn has_denominator(&self) -> bool {
        !self.0.den.is_empty()
    }

    pub fn numerator(&self) -> ScalarExpr {
        Self::from_parts(self.0.num.clone(), BTreeMap::new())
    }

    pub fn depends_on(&self, coord: &str) -> bool {
        self.0
            .num
            .keys()
            .chain(self.0.den.keys().flat_map(|p| p.keys()))
            .any(|m| m.0.iter().any(|(a, _)| a.depends_on(coord)))
    }

    pub(crate) fn collect_coords(&self, out: &mut std::collections::BTreeSet<Arc<str>>) {
        for m in self.0.num.keys().chain(self.0.den.keys().flat_map(|p| p.keys())) {
            for (a, _) in &m.0 {
                a.collect_coords(out);
            }
        }
    }

    pub(crate) fn collect_funcs(&self, out: &mut std::collections::BTreeSet<Arc<str>>) {
        for m in self.0.num.keys().chain(self.0.den.keys().flat_map(|p| p.keys())) {
            for (a, _) in &m.0 {
                a.collect_funcs(out);
            }
        }
    }

    /// Free coordinate names, sorted.
    pub fn free_coords(&self) -> Vec<String> {
        let mut set = std::collections::BTreeSet::new();
        self.collect_coords(&mut set);
        set.into_iter().map(|s| s.to_string()).collect()
    }

    /// Names of uninterpreted functions occurring anywhere in the expression.
    pub fn uninterpreted_functions(&self) -> Vec<String> {
        let mut set = std::collections::BTreeSet::new();
        self.collect_funcs(&mut set);
        set.into_iter().map(|s| s.to_string()).collect()
    }

    pub fn neg(&self) -> Self {
        let num = self.0.num.iter().map(|(m, c)| (m.clone(), -c)).collect();
        Self::from_parts(num, self.0.den.clone())
    }

    pub fn add(&self, other: &Self) -> Self {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        if self.0.den.is_empty() && other.0.den.is_empty() {
            return Self::from_parts(poly_add(&self.0.num, &other.0.num), BTreeMap::new());
        }
        if self.0.den == other.0.den {
            let num = poly_add(&self.0.num, &other.0.num);
            return normalize(num, self.0.den.clone());
        }
        let mut lcm = self.0.den.clone();
        for (p, k) in &other.0.den {
            let e = lcm.entry(p.clone()).or_insert(0);
            *e = (*e).max(*k);
        }
        let scale_a = factor_quotient(&lcm, &self.0.den);
        let scale_b = factor_quotient(&lcm, &other.0.den);
        let ta = mul_num_by_factors(&self.0.num, &scale_a);
        let tb = mul_num_by_factors(&other.0.num, &scale_b);
        if !ta.has_denominator() && !tb.has_denominator() {
            let num = poly_add(&ta.0.num, &tb.0.num);
            normalize(num, lcm)
        } else {
            let sum = ta.add(&tb);
            sum.mul(&Self::from_parts(one_poly(), lcm))
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let raw = poly_mul_raw(&self.0.num, &other.0.num);
        let t = reduce(raw);
        if self.0.den.is_empty() && other.0.den.is_empty() {
            return t;
        }
        let mut den = t.0.den.clone();
        for (p, k) in self.0.den.iter().chain(other.0.den.iter()) {
            *den.entry(p.clone()).or_insert(0) += k;
        }
        normalize(t.0.num.clone(), den)
    }

    pub fn scale(&self, c: &Q) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        let num = self.0.num.iter().map(|(m, x)| (m.clone(), x * c)).collect();
        Self::from_parts(num, self.0.den.clone())
    }

    /// Multiplicative inverse; `None` for the zero expression.
    pub fn recip(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let (content, mono, prim) = split_content(&self.0.num);
        let head = Self::from_term(content.recip(), mono.inv());
        let den_expanded = expand_factors(&self.0.den);
        let top = den_expanded.mul(&head);
        if is_constant_poly(&prim) {
            return Some(top);
        }
        let mut den = top.0.den.clone();
        *den.entry(prim).or_insert(0) += 1;
        Some(normalize(top.0.num.clone(), den))
    }

    pub fn div(&self, other: &Self) -> Option<Self> {
        other.recip().map(|r| self.mul(&r))
    }

    pub fn powi(&self, k: i32) -> Option<Self> {
        if k < 0 {
            return self.recip()?.powi(-k);
        }
        let mut base = self.clone();
        let mut acc = Self::one();
        let mut k = k as u32;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base);
            }
        }
        Some(acc)
    }

    /// Leading coefficient sign of the numerator (denominator factors are
    /// normalized to a positive leading coefficient).
    fn leading_negative(&self) -> bool {
        leading(&self.0.num).map(|(_, c)| c.is_negative()).unwrap_or(false)
    }

    /// Rational multiple of `pi`, if this expression is one.
    fn as_pi_multiple(&self) -> Option<Q> {
        if self.0.den.is_empty() && self.0.num.len() == 1 {
            let (m, c) = self.0.num.iter().next().unwrap();
            if m.0.len() == 1 && m.0[0] == (Atom::Pi, 1) {
                return Some(c.clone());
            }
        }
        None
    }

    pub fn sin(&self) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        if let Some(q) = self.as_pi_multiple() {
            if let Some(v) = sin_half_pi_table(&q) {
                return Self::int(v);
            }
        }
        if self.leading_negative() {
            return Self::from_atom(Atom::Sin(self.neg())).neg();
        }
        Self::from_atom(Atom::Sin(self.clone()))
    }

    pub fn cos(&self) -> Self {
        if self.is_zero() {
            return Self::one();
        }
        if let Some(q) = self.as_pi_multiple() {
            let shifted = q + Q::new(BigInt::one(), BigInt::from(2));
            if let Some(v) = sin_half_pi_table(&shifted) {
                return Self::int(v);
            }
        }
        if self.leading_negative() {
            return Self::from_atom(Atom::Cos(self.neg()));
        }
        Self::from_atom(Atom::Cos(self.clone()))
    }

    pub fn exp(&self) -> Self {
        if self.is_zero() {
            return Self::one();
        }
        Self::from_atom(Atom::Exp(self.clone()))
    }

    pub fn sqrt(&self) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        if let Some(c) = self.as_constant() {
            if c.is_positive() {
                let n = c.numer() * c.denom();
                let (s, f) = square_split(&n);
                let outer = Self::constant(Q::new(s, c.denom().clone()));
                if f.is_one() {
                    return outer;
                }
                return outer.mul(&Self::from_atom(Atom::Sqrt(Self::constant(Q::from_integer(f)))));
            }
        }
        if self.0.den.is_empty() && self.0.num.len() == 1 {
            let (m, c) = self.0.num.iter().next().unwrap();
            if c.is_positive() && !c.is_one() {
                let rest = Self::from_term(Q::one(), m.clone());
                return Self::constant(c.clone()).sqrt().mul(&rest.sqrt());
            }
        }
        Self::from_atom(Atom::Sqrt(self.clone()))
    }

    /// Square root up to sign: even atom powers of a single-term numerator
    /// and even powers of denominator factors leave the radical.
    pub fn sqrt_up_to_sign(&self) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        let mut outer = Self::one();
        let mut inner;
        if self.0.num.len() == 1 {
            let (m, c) = self.0.num.iter().next().unwrap();
            inner = Self::constant(c.clone());
            for (a, e) in &m.0 {
                let atom = Self::from_atom(a.clone());
                let half = e.div_euclid(2);
                let rem = e.rem_euclid(2);
                if let Some(v) = atom.powi(half) {
                    outer = outer.mul(&v);
                }
                if rem == 1 {
                    inner = inner.mul(&atom);
                }
            }
        } else {
            inner = Self::from_parts(self.0.num.clone(), BTreeMap::new());
        }
        for (p, k) in &self.0.den {
            let pe = Self::from_parts(p.clone(), BTreeMap::new());
            if let Some(v) = pe.powi((k / 2) as i32).and_then(|v| v.recip()) {
                outer = outer.mul(&v);
            }
            if k % 2 == 1 {
                inner = inner.div(&pe).unwrap_or(inner);
            }
        }
        outer.mul(&inner.sqrt())
    }

    /// Uninterpreted function application `name^(order)(arg)`.
    pub fn func(name: &str, order: u32, arg: &Self) -> Self {
        Self::from_atom(Atom::Func {
            name: Arc::from(name),
            order,
            arg: arg.clone(),
        })
    }

    /// Exact partial derivative with respect to a coordinate.
    pub fn diff(&self, coord: &str) -> Self {
        if !self.depends_on(coord) {
            return Self::zero();
        }
        let dnum = poly_diff(&self.0.num, coord);
        if self.0.den.is_empty() {
            return dnum;
        }
        // d(N/D) = N'/D - (N/D) * sum_k k P_k' / P_k
        let den_only = Self::from_parts(one_poly(), self.0.den.clone());
        let mut out = dnum.mul(&den_only);
        for (p, k) in &self.0.den {
            let dp = poly_diff(p, coord);
            if dp.is_zero() {
                continue;
            }
            let mut single = BTreeMap::new();
            single.insert(p.clone(), 1);
            let ratio = dp.mul(&Self::from_parts(one_poly(), single));
            let term = self.mul(&ratio).scale(&Q::from_integer(BigInt::from(*k)));
            out = out.sub(&term);
        }
        out
    }

    /// Replaces coordinates by expressions. Coordinates not in `map` are kept.
    pub fn substitute(&self, map: &dyn Fn(&str) -> Option<ScalarExpr>) -> Self {
        self.map_atoms(&|atom: &Atom| match atom {
            Atom::Coord(c) => map(c),
            _ => None,
        })
    }

    /// Rebuilds the expression, replacing atoms for which `f` returns a value
    /// and recursing into the arguments of the others.
    pub fn map_atoms(&self, f: &dyn Fn(&Atom) -> Option<ScalarExpr>) -> Self {
        let num = map_poly_atoms(&self.0.num, f);
        let mut out = num;
        for (p, k) in &self.0.den {
            let pe = map_poly_atoms(p, f);
            match pe.powi(*k as i32).and_then(|d| out.div(&d)) {
                Some(v) => out = v,
                None => return self.clone(),
            }
        }
        out
    }
}

/// Applies an atom map to every monomial of a polynomial.
fn map_poly_atoms(p: &Poly, f: &dyn Fn(&Atom) -> Option<ScalarExpr>) -> ScalarExpr {
    let mut acc = ScalarExpr::zero();
    for (m, c) in p {
        let mut term = ScalarExpr::constant(c.clone());
        for (a, e) in &m.0 {
            let base = match f(a) {
                Some(v) => v,
                None => rebuild_atom(a, f),
            };
            match base.powi(*e) {
                Some(v) => term = term.mul(&v),
                None => return ScalarExpr::from_parts(p.clone(), BTreeMap::new()),
            }
        }
        acc = acc.add(&term);
    }
    acc
}

fn rebuild_atom(a: &Atom, f: &dyn Fn(&Atom) -> Option<ScalarExpr>) -> ScalarExpr {
    match a {
        Atom::Coord(_) | Atom::Pi => ScalarExpr::from_atom(a.clone()),
        Atom::Sin(u) => u.map_atoms(f).sin(),
        Atom::Cos(u) => u.map_atoms(f).cos(),
        Atom::Exp(u) => u.map_atoms(f).exp(),
        Atom::Sqrt(u) => u.map_atoms(f).sqrt(),
        Atom::Func { name, order, arg } => ScalarExpr::func(name, *order, &arg.map_atoms(f)),
    }
}

/// `sin(q * pi)` for `q` a multiple of 1/2.
fn sin_half_pi_table(q: &Q) -> Option<i64> {
    let twice = q * Q::from_integer(BigInt::from(2));
    if !twice.is_integer() {
        return None;
    }
    let k = twice.to_integer().mod_floor(&BigInt::from(4)).to_i64()?;
    Some([0, 1, 0, -1][k as usize])
}

fn one_poly() -> Poly {
    let mut p = Poly::new();
    p.insert(Monomial::one(), Q::one());
    p
}

fn factor_quotient(big: &BTreeMap<Poly, u32>, small: &BTreeMap<Poly, u32>) -> BTreeMap<Poly, u32> {
    let mut out = BTreeMap::new();
    for (p, k) in big {
        let s = small.get(p).copied().unwrap_or(0);
        if *k > s {
            out.insert(p.clone(), k - s);
        }
    }
    out
}

fn expand_factors(factors: &BTreeMap<Poly, u32>) -> ScalarExpr {
    let mut acc = ScalarExpr::one();
    for (p, k) in factors {
        let base = ScalarExpr::from_parts(p.clone(), BTreeMap::new());
        for _ in 0..*k {
            acc = acc.mul(&base);
        }
    }
    acc
}

fn mul_num_by_factors(num: &Poly, factors: &BTreeMap<Poly, u32>) -> ScalarExpr {
    let base = ScalarExpr::from_parts(num.clone(), BTreeMap::new());
    if factors.is_empty() {
        return base;
    }
    base.mul(&expand_factors(factors))
}

/// Splits `p = content * mono * prim` where `prim` has integer coprime
/// coefficients, a positive leading coefficient and no monomial content.
fn split_content(p: &Poly) -> (Q, Monomial, Poly) {
    // Monomial content: per-atom minimum exponent over all terms (atoms absent
    // from some term contribute min(0, e)).
    let mut mins: BTreeMap<Atom, i32> = BTreeMap::new();
    let nterms = p.len();
    let mut counts: BTreeMap<Atom, usize> = BTreeMap::new();
    for m in p.keys() {
        for (a, e) in &m.0 {
            let entry = mins.entry(a.clone()).or_insert(*e);
            *entry = (*entry).min(*e);
            *counts.entry(a.clone()).or_insert(0) += 1;
        }
    }
    let mono = Monomial(
        mins.into_iter()
            .filter_map(|(a, e)| {
                let e = if counts[&a] < nterms { e.min(0) } else { e };
                (e != 0).then_some((a, e))
            })
            .collect(),
    );
    let mut num_gcd = BigInt::zero();
    let mut den_lcm = BigInt::one();
    for c in p.values() {
        num_gcd = num_gcd.gcd(c.numer());
        den_lcm = den_lcm.lcm(c.denom());
    }
    let mut content = Q::new(num_gcd, den_lcm);
    if let Some((_, lc)) = leading(p) {
        if lc.is_negative() {
            content = -content;
        }
    }
    let inv_mono = mono.inv();
    let inv_c = content.recip();
    let prim = p
        .iter()
        .map(|(m, c)| (m.mul(&inv_mono), c * &inv_c))
        .collect();
    (content, mono, prim)
}

/// Cancels denominator factors against the numerator where exact division
/// succeeds, and assembles the canonical value.
fn normalize(mut num: Poly, mut den: BTreeMap<Poly, u32>) -> ScalarExpr {
    if num.is_empty() {
        return ScalarExpr::zero();
    }
    let keys: Vec<Poly> = den.keys().cloned().collect();
    for p in keys {
        let mut k = den[&p];
        while k > 0 {
            match poly_exact_div(&num, &p) {
                Some(q) if q.keys().all(Monomial::is_reduced) && !q.is_empty() => {
                    num = q;
                    k -= 1;
                }
                _ => break,
            }
        }
        if k == 0 {
            den.remove(&p);
        } else {
            den.insert(p, k);
        }
    }
    ScalarExpr::from_parts(num, den)
}

/// Applies the monomial reduction rules to a raw polynomial.
fn reduce(raw: Poly) -> ScalarExpr {
    if raw.keys().all(Monomial::is_reduced) {
        return ScalarExpr::from_parts(raw, BTreeMap::new());
    }
    let mut clean = Poly::new();
    let mut extra = ScalarExpr::zero();
    for (m, c) in raw {
        if m.is_reduced() {
            poly_add_term(&mut clean, m, c);
        } else {
            extra = extra.add(&fix_monomial(&c, &m));
        }
    }
    ScalarExpr::from_parts(clean, BTreeMap::new()).add(&extra)
}

fn fix_monomial(c: &Q, m: &Monomial) -> ScalarExpr {
    let (rest, taken) = m.without(|a, e| match a {
        Atom::Exp(_) => true,
        Atom::Sqrt(_) => e != 1,
        Atom::Sin(_) => e >= 2,
        _ => false,
    });
    let mut acc = ScalarExpr::from_parts(
        {
            let mut p = Poly::new();
            poly_add_term(&mut p, rest, c.clone());
            p
        },
        BTreeMap::new(),
    );
    let mut exp_arg = ScalarExpr::zero();
    let mut has_exp = false;
    for (a, e) in taken {
        match a {
            Atom::Exp(u) => {
                has_exp = true;
                exp_arg = exp_arg.add(&u.scale(&Q::from_integer(BigInt::from(e))));
            }
            Atom::Sqrt(u) => {
                let q = e.div_euclid(2);
                let s = e.rem_euclid(2);
                let mut f = u.powi(q).unwrap_or_else(ScalarExpr::zero);
                if s == 1 {
                    f = f.mul(&ScalarExpr::from_atom(Atom::Sqrt(u.clone())));
                }
                acc = acc.mul(&f);
            }
            Atom::Sin(u) => {
                let one_minus_cos2 = ScalarExpr::one().sub(&ScalarExpr::from_atom(Atom::Cos(u.clone())).powi(2).unwrap());
                let mut f = one_minus_cos2.powi(e / 2).unwrap();
                if e % 2 == 1 {
                    f = f.mul(&ScalarExpr::from_atom(Atom::Sin(u.clone())));
                }
                acc = acc.mul(&f);
            }
            _ => unreachable!(),
        }
    }
    if has_exp {
        acc = acc.mul(&exp_arg.exp());
    }
    acc
}

fn poly_diff(p: &Poly, coord: &str) -> ScalarExpr {
    let mut out = ScalarExpr::zero();
    for (m, c) in p {
        for (i, (a, e)) in m.0.iter().enumerate() {
            if !a.depends_on(coord) {
                continue;
            }
            let datom = atom_diff(a, coord);
            if datom.is_zero() {
                continue;
            }
            let mut rest = m.0.clone();
            if *e == 1 {
                rest.remove(i);
            } else {
                rest[i].1 = e - 1;
            }
            let coef = c * Q::from_integer(BigInt::from(*e));
            let term = ScalarExpr::from_term(coef, Monomial(rest)).mul(&datom);
            out = out.add(&term);
        }
    }
    out
}

fn atom_diff(a: &Atom, coord: &str) -> ScalarExpr {
    match a {
        Atom::Coord(c) => {
            if &**c == coord {
                ScalarExpr::one()
            } else {
                ScalarExpr::zero()
            }
        }
        Atom::Pi => ScalarExpr::zero(),
        Atom::Sin(u) => u.cos().mul(&u.diff(coord)),
        Atom::Cos(u) => u.sin().neg().mul(&u.diff(coord)),
        Atom::Exp(u) => u.exp().mul(&u.diff(coord)),
        Atom::Sqrt(u) => {
            let du = u.diff(coord);
            let two_root = ScalarExpr::int(2).mul(&u.sqrt());
            du.div(&two_root).unwrap_or_else(ScalarExpr::zero)
        }
        Atom::Func { name, order, arg } => {
            ScalarExpr::func(name, order + 1, arg).mul(&arg.diff(coord))
        }
    }
}

impl std::ops::Add for &ScalarExpr {
    type Output = ScalarExpr;
    fn add(self, rhs: &ScalarExpr) -> ScalarExpr {
        ScalarExpr::add(self, rhs)
    }
}

impl std::ops::Sub for &ScalarExpr {
    type Output = ScalarExpr;
    fn sub(self, rhs: &ScalarExpr) -> ScalarExpr {
        ScalarExpr::sub(self, rhs)
    }
}

impl std::ops::Mul for &ScalarExpr {
    type Output = ScalarExpr;
    fn mul(self, rhs: &ScalarExpr) -> ScalarExpr {
        ScalarExpr::mul(self, rhs)
    }
}

impl std::ops::Neg for &ScalarExpr {
    type Output = ScalarExpr;
    fn neg(self) -> ScalarExpr {
        ScalarExpr::neg(self)
    }
}

impl std::ops::Add for ScalarExpr {
    type Output = ScalarExpr;
    fn add(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::add(&self, &rhs)
    }
}

impl std::ops::Sub for ScalarExpr {
    type Output = ScalarExpr;
    fn sub(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::sub(&self, &rhs)
    }
}

impl std::ops::Mul for ScalarExpr {
    type Output = ScalarExpr;
    fn mul(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::mul(&self, &rhs)
    }
}

impl std::ops::Neg for ScalarExpr {
    type Output = ScalarExpr;
    fn neg(self) -> ScalarExpr {
        ScalarExpr::neg(&self)
    }
}

impl From<i64> for ScalarExpr {
    fn from(n: i64) -> Self {
        ScalarExpr::int(n)
    }
}
