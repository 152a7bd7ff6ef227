//! Recursive descent over the token stream, producing an unresolved AST.

use num_bigint::BigInt;
use num_traits::Zero;

use super::lexer::{lex, Tok, Token};
use super::ParseError;
use crate::expr::Q;

pub(crate) const KEYWORDS: &[&str] = &["chart", "scalar", "field", "sds", "action", "map", "op", "system"];
const MAX_DEPTH: usize = 256;

#[derive(Clone, Debug)]
pub(crate) struct Name {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum Node {
    Num(Q),
    Name(Name),
    Call(Name, Box<Node>),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>, usize),
    Pow(Box<Node>, i32, usize),
}

#[derive(Clone, Debug)]
pub(crate) struct CoordDecl {
    pub name: Name,
    pub period: Option<Node>,
    pub lower: Option<Q>,
    pub upper: Option<Q>,
}

/// `[-] coef * d/da * d/db ...`; a missing coefficient means 1.
#[derive(Clone, Debug)]
pub(crate) struct Term {
    pub negate: bool,
    pub coef: Option<Node>,
    pub derivs: Vec<Name>,
    pub start: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum Body {
    Chart(Vec<CoordDecl>),
    Scalar { chart: Name, value: Node },
    Field { chart: Name, terms: Vec<Term> },
    Sds { chart: Name, drift: Vec<Name>, noise: Vec<Name> },
    Action { chart: Name, generators: Vec<Name> },
    Map { source: Name, target: Name, components: Vec<(Name, Node)> },
    Op { chart: Name, terms: Vec<Term> },
    OpGenerator { chart: Name, sds: Name },
    System { chart: Name, lambda: Vec<Name>, z: Vec<Name>, f: Vec<Name> },
}

#[derive(Clone, Debug)]
pub(crate) struct Stmt {
    pub name: Name,
    pub body: Body,
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Token>,
    pos: usize,
    depth: usize,
    errors: Vec<ParseError>,
}

type PResult<T> = Result<T, ParseError>;

pub(crate) fn parse_statements(src: &str) -> (Vec<Stmt>, Vec<ParseError>) {
    let (toks, errors) = lex(src);
    let mut p = Parser {
        src,
        toks,
        pos: 0,
        depth: 0,
        errors,
    };
    let mut stmts = Vec::new();
    while !p.at_eof() {
        let start = p.pos;
        p.depth = 0;
        match p.statement() {
            Ok(s) => stmts.push(s),
            Err(e) => {
                p.errors.push(e);
                p.recover(start);
            }
        }
    }
    (stmts, p.errors)
}

/// A lone expression followed by end of input.
pub(crate) fn parse_expression(src: &str) -> Result<Node, Vec<ParseError>> {
    let (toks, errors) = lex(src);
    if !errors.is_empty() {
        return Err(errors);
    }
    let mut p = Parser {
        src,
        toks,
        pos: 0,
        depth: 0,
        errors: Vec::new(),
    };
    let node = p.expr().map_err(|e| vec![e])?;
    if !p.at_eof() {
        return Err(vec![p.expected(&["an operator", "end of input"])]);
    }
    Ok(node)
}

fn parse_decimal(text: &str) -> Q {
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    let digits = format!("{int}{frac}");
    let numer: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().expect("lexer yields digits")
    };
    let denom = BigInt::from(10u32).pow(frac.len() as u32);
    Q::new(numer, denom)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if !matches!(t.tok, Tok::Eof) {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == w)
    }

    /// Error located just after the previous token, so a missing separator
    /// is reported at the gap where it belongs.
    fn expected(&self, what: &[&str]) -> ParseError {
        let found = &self.toks[self.pos];
        let at = if self.pos > 0 { self.toks[self.pos - 1].end } else { found.start };
        let list: Vec<String> = what.iter().map(|s| s.to_string()).collect();
        let joined = match what.len() {
            1 => what[0].to_string(),
            _ => format!("{} or {}", what[..what.len() - 1].join(", "), what[what.len() - 1]),
        };
        ParseError::at(
            self.src,
            at,
            at.max(found.start.min(at + 1)),
            format!("expected {joined}, found {}", found.tok.describe()),
            list,
        )
    }

    fn expect_punct(&mut self, p: &'static str) -> PResult<Token> {
        if self.is_punct(p) {
            Ok(self.bump())
        } else {
            Err(self.expected(&[&format!("'{p}'")]))
        }
    }

    fn expect_word(&mut self, w: &str) -> PResult<()> {
        if self.is_word(w) {
            self.bump();
            Ok(())
        } else {
            Err(self.expected(&[&format!("'{w}'")]))
        }
    }

    fn name(&mut self, what: &str) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Ident(text) if !text.contains('\'') => {
                let t = self.bump();
                if KEYWORDS.contains(&text.as_str()) {
                    return Err(ParseError::at(
                        self.src,
                        t.start,
                        t.end,
                        format!("`{text}` is a reserved word and cannot be used as {what}"),
                        vec![],
                    ));
                }
                Ok(Name {
                    text,
                    start: t.start,
                    end: t.end,
                })
            }
            _ => Err(self.expected(&[what])),
        }
    }

    /// Skips to the next token that can start a statement.
    fn recover(&mut self, stmt_start: usize) {
        if self.pos == stmt_start {
            self.bump();
        }
        while !self.at_eof() {
            if let Tok::Ident(w) = self.peek() {
                if KEYWORDS.contains(&w.as_str()) {
                    return;
                }
            }
            self.bump();
        }
    }

    fn statement(&mut self) -> PResult<Stmt> {
        let kw = match self.peek() {
            Tok::Ident(w) if KEYWORDS.contains(&w.as_str()) => w.clone(),
            _ => return Err(self.expected(&["a statement keyword"])),
        };
        self.bump();
        let name = self.name("a name")?;
        let body = match kw.as_str() {
            "chart" => self.chart()?,
            "scalar" => {
                let chart = self.on_chart()?;
                self.expect_punct("=")?;
                Body::Scalar {
                    chart,
                    value: self.expr()?,
                }
            }
            "field" => {
                let chart = self.on_chart()?;
                self.expect_punct("=")?;
                Body::Field {
                    chart,
                    terms: self.terms()?,
                }
            }
            "sds" => self.sds()?,
            "action" => {
                let chart = self.on_chart()?;
                self.expect_word("generators")?;
                Body::Action {
                    chart,
                    generators: self.name_list(true)?,
                }
            }
            "map" => self.map()?,
            "op" => {
                let chart = self.on_chart()?;
                self.expect_punct("=")?;
                if self.is_word("generator") && matches!(self.peek_at(1), Tok::Punct("(")) {
                    self.bump();
                    self.bump();
                    let sds = self.name("an SDS name")?;
                    self.expect_punct(")")?;
                    Body::OpGenerator { chart, sds }
                } else {
                    Body::Op {
                        chart,
                        terms: self.terms()?,
                    }
                }
            }
            "system" => self.system()?,
            _ => unreachable!("keyword list is exhaustive"),
        };
        Ok(Stmt { name, body })
    }

    fn on_chart(&mut self) -> PResult<Name> {
        self.expect_word("on")?;
        self.name("a chart name")
    }

    fn chart(&mut self) -> PResult<Body> {
        self.expect_punct("{")?;
        let mut coords = Vec::new();
        loop {
            let name = self.name("a coordinate name")?;
            let mut decl = CoordDecl {
                name,
                period: None,
                lower: None,
                upper: None,
            };
            if self.is_word("mod") {
                self.bump();
                decl.period = Some(self.expr()?);
            } else {
                while self.is_punct(">") || self.is_punct("<") {
                    let t = self.bump();
                    let bound = self.signed_number()?;
                    let slot = if t.tok == Tok::Punct(">") { &mut decl.lower } else { &mut decl.upper };
                    if slot.is_some() {
                        return Err(ParseError::at(self.src, t.start, t.end, "bound given twice".into(), vec![]));
                    }
                    *slot = Some(bound);
                }
            }
            coords.push(decl);
            if self.is_punct(",") {
                self.bump();
            } else if self.is_punct("}") {
                self.bump();
                return Ok(Body::Chart(coords));
            } else {
                let mut what = vec!["','", "'}'"];
                if coords.last().is_some_and(|c| c.period.is_none()) {
                    what.splice(0..0, ["'>'", "'<'", "'mod'"]);
                }
                return Err(self.expected(&what));
            }
        }
    }

    /// `[-] NUM [/ NUM]`.
    fn signed_number(&mut self) -> PResult<Q> {
        let neg = if self.is_punct("-") {
            self.bump();
            true
        } else {
            false
        };
        let mut q = self.number()?;
        if self.is_punct("/") {
            let t = self.bump();
            let d = self.number()?;
            if d.is_zero() {
                return Err(ParseError::at(self.src, t.start, t.end, "division by zero".into(), vec![]));
            }
            q /= d;
        }
        Ok(if neg { -q } else { q })
    }

    fn number(&mut self) -> PResult<Q> {
        match self.peek().clone() {
            Tok::Num(s) => {
                self.bump();
                Ok(parse_decimal(&s))
            }
            _ => Err(self.expected(&["a number"])),
        }
    }

    fn sds(&mut self) -> PResult<Body> {
        let chart = self.on_chart()?;
        self.expect_punct("=")?;
        let mut drift = Vec::new();
        if matches!(self.peek(), Tok::Num(s) if s == "0") {
            self.bump();
        } else {
            drift.push(self.name("a drift field name")?);
        }
        let mut noise = Vec::new();
        while self.is_punct("+") {
            self.bump();
            if self.is_punct("[") {
                noise = self.name_list(true)?;
                break;
            }
            drift.push(self.name("a field name or '['")?);
        }
        Ok(Body::Sds { chart, drift, noise })
    }

    /// `[ a, b, ... ]`; commas are optional unless `strict`.
    fn name_list(&mut self, strict: bool) -> PResult<Vec<Name>> {
        self.expect_punct("[")?;
        let mut out = Vec::new();
        if self.is_punct("]") {
            self.bump();
            return Ok(out);
        }
        loop {
            out.push(self.name("a name")?);
            if self.is_punct("]") {
                self.bump();
                return Ok(out);
            }
            if self.is_punct(",") {
                self.bump();
                continue;
            }
            if strict || !matches!(self.peek(), Tok::Ident(_)) {
                return Err(self.expected(&["','", "']'"]));
            }
        }
    }

    fn map(&mut self) -> PResult<Body> {
        self.expect_punct(":")?;
        let source = self.name("a source chart name")?;
        self.expect_punct("->")?;
        let target = self.name("a target chart name")?;
        self.expect_punct("{")?;
        let mut components = Vec::new();
        loop {
            let coord = self.name("a target coordinate")?;
            self.expect_punct("=")?;
            components.push((coord, self.expr()?));
            if self.is_punct(",") {
                self.bump();
            } else if self.is_punct("}") {
                self.bump();
                return Ok(Body::Map {
                    source,
                    target,
                    components,
                });
            } else {
                return Err(self.expected(&["','", "'}'"]));
            }
        }
    }

    fn system(&mut self) -> PResult<Body> {
        let chart = self.on_chart()?;
        self.expect_punct("{")?;
        self.expect_word("lambda")?;
        let lambda = self.name_list(false)?;
        self.expect_word("z")?;
        let z = self.name_list(false)?;
        self.expect_word("f")?;
        let f = self.name_list(false)?;
        self.expect_punct("}")?;
        Ok(Body::System { chart, lambda, z, f })
    }

    /// Sum of terms `coef * d/dx * ...`, or a lone coefficient.
    fn terms(&mut self) -> PResult<Vec<Term>> {
        let mut out = Vec::new();
        let mut negate = false;
        if self.is_punct("-") {
            self.bump();
            negate = true;
        } else if self.is_punct("+") {
            self.bump();
        }
        loop {
            out.push(self.term(negate)?);
            if self.is_punct("+") {
                negate = false;
            } else if self.is_punct("-") {
                negate = true;
            } else {
                return Ok(out);
            }
            self.bump();
        }
    }

    fn term(&mut self, negate: bool) -> PResult<Term> {
        let start = self.toks[self.pos].start;
        let mut derivs = Vec::new();
        let coef = if matches!(self.peek(), Tok::Deriv(_)) {
            None
        } else {
            let c = self.product()?;
            if !(self.is_punct("*") && matches!(self.peek_at(1), Tok::Deriv(_))) {
                return Ok(Term {
                    negate,
                    coef: Some(c),
                    derivs,
                    start,
                });
            }
            self.bump();
            Some(c)
        };
        loop {
            let t = self.bump();
            match t.tok {
                Tok::Deriv(text) => derivs.push(Name {
                    text,
                    start: t.start + 3,
                    end: t.end,
                }),
                _ => unreachable!("caller checked for a derivative"),
            }
            if self.is_punct("*") && matches!(self.peek_at(1), Tok::Deriv(_)) {
                self.bump();
            } else {
                return Ok(Term {
                    negate,
                    coef,
                    derivs,
                    start,
                });
            }
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            let t = &self.toks[self.pos];
            return Err(ParseError::at(self.src, t.start, t.end, "expression nested too deeply".into(), vec![]));
        }
        Ok(())
    }

    pub(crate) fn expr(&mut self) -> PResult<Node> {
        self.enter()?;
        let mut lhs = self.product()?;
        loop {
            if self.is_punct("+") {
                self.bump();
                lhs = Node::Add(Box::new(lhs), Box::new(self.product()?));
            } else if self.is_punct("-") {
                self.bump();
                lhs = Node::Sub(Box::new(lhs), Box::new(self.product()?));
            } else {
                break;
            }
        }
        self.depth -= 1;
        Ok(lhs)
    }

    /// Products stop before `* d/dx`, which belongs to the enclosing term.
    fn product(&mut self) -> PResult<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.is_punct("*") && !matches!(self.peek_at(1), Tok::Deriv(_)) {
                self.bump();
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.is_punct("/") {
                let at = self.bump().start;
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?), at);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> PResult<Node> {
        self.enter()?;
        let out = if self.is_punct("-") {
            self.bump();
            Node::Neg(Box::new(self.unary()?))
        } else if self.is_punct("+") {
            self.bump();
            self.unary()?
        } else {
            self.power()?
        };
        self.depth -= 1;
        Ok(out)
    }

    fn power(&mut self) -> PResult<Node> {
        let base = self.atom()?;
        if !self.is_punct("^") {
            return Ok(base);
        }
        let at = self.bump().start;
        let paren = self.is_punct("(");
        if paren {
            self.bump();
        }
        let neg = self.is_punct("-");
        if neg {
            self.bump();
        }
        let k = match self.peek().clone() {
            Tok::Num(s) if !s.contains('.') => {
                let t = self.bump();
                s.parse::<i32>().map_err(|_| {
                    ParseError::at(self.src, t.start, t.end, "exponent out of range".into(), vec![])
                })?
            }
            _ => return Err(self.expected(&["an integer exponent"])),
        };
        if paren {
            self.expect_punct(")")?;
        }
        Ok(Node::Pow(Box::new(base), if neg { -k } else { k }, at))
    }

    fn atom(&mut self) -> PResult<Node> {
        match self.peek().clone() {
            Tok::Num(s) => {
                self.bump();
                Ok(Node::Num(parse_decimal(&s)))
            }
            Tok::Ident(text) if !KEYWORDS.contains(&text.as_str()) => {
                let t = self.bump();
                let name = Name {
                    text,
                    start: t.start,
                    end: t.end,
                };
                if self.is_punct("(") {
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_punct(")")?;
                    Ok(Node::Call(name, Box::new(arg)))
                } else {
                    Ok(Node::Name(name))
                }
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            _ => Err(self.expected(&["an expression"])),
        }
    }
}

impl Node {
    pub(crate) fn is_literal_zero(&self) -> bool {
        matches!(self, Node::Num(q) if q.is_zero())
    }
}
