//! Text syntax for expressions, smooth maps, distributions and piecewise
//! maps, with printers that the parsers invert exactly.
//!
//! ```text
//! expr     := sum
//! sum      := product (('+' | '-') product)*
//! product  := unary (('*' | '/') unary)*
//! unary    := '-' unary | power
//! power    := atom ['^' int | '^' '(' int ')' | '^' unary]
//! atom     := number | variable | 'pi' | 'inf' | 'NaN' | func '(' expr ')' | '(' expr ')'
//!           | 'D' multi '[' expr ']' '(' expr (',' expr)* ')'
//! smooth   := expr (',' expr)* ['on' box]
//! dist     := ['-'] term (('+' | '-') term)* ['in' box] | '0' ['in' box]
//! term     := [number '*'] base
//! base     := 'D' multi base | ('delta' | 'H') '\''* ['@' point]
//!           | 'fn' '(' expr ')' 'on' box | plmap
//! plmap    := 'pl' '{' piece (';' piece)* [';'] '}' ['on' box] ['ext' box] ['tol' number]
//! piece    := box ['where' vector '<=' number (',' vector '<=' number)*] '->' map
//! map      := 'affine' '(' matrix ',' vector ')' | 'fn' '(' expr (',' expr)* ')' ['on' box]
//! box      := interval ('x' interval)*
//! interval := '[' number ',' number ']'
//! point    := number | '(' number (',' number)* ')'
//! multi    := '(' int (',' int)* ')'
//! matrix   := number | vector | '[' vector (',' vector)* ']'
//! vector   := number | '[' number (',' number)* ']'
//! ```
//!
//! Variables are `x, y, z, w` and `x4, x5, …`; functions are `exp`, `log`
//! (or `ln`), `sin`, `cos`, `erf`, `gauss`, `smoothstep` and `bump`. A
//! non-integer exponent `a^b` reads as `exp(b·log(a))`.

use std::fmt;

use thiserror::Error;

use crate::dist::{Base, Distribution, Term};
use crate::expr::{fmt_num, Expr, Func, Node, VAR_NAMES};
use crate::geometry::{Cell, Piece, PieceMap, PLMap, CONTINUITY_TOL};
use crate::jet::MultiIndex;
use crate::smooth::{DomainBox, SmoothMap};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{column}: {message}{}", expected_suffix(expected))]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub expected: Vec<String>,
}

fn expected_suffix(expected: &[String]) -> String {
    if expected.is_empty() {
        String::new()
    } else {
        format!(" (expected one of: {})", expected.join(", "))
    }
}

/// Result of [`parse_expression`].
#[derive(Clone, Debug, PartialEq)]
pub enum Parsed {
    Distribution(Distribution),
    Smooth(SmoothMap),
}

/// Parses a distribution if the text mentions `delta`, `H`, `fn`, `pl` or
/// `in`, and a smooth map otherwise.
pub fn parse_expression(text: &str) -> Result<Parsed, ParseError> {
    let tokens = lex(text)?;
    let is_dist = tokens.iter().any(|t| t.tok == Tok::Ident && (DIST_KEYWORDS.contains(&t.text) || t.text == "in"));
    if is_dist {
        parse_distribution(text).map(Parsed::Distribution)
    } else {
        parse_smooth(text).map(Parsed::Smooth)
    }
}

pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

/// An expression whose variables are `names[0], names[1], …` in order.
pub fn parse_expr_in(text: &str, names: &[&str]) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text)?;
    p.names = Some(names.iter().map(|s| s.to_string()).collect());
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

/// Identifiers appearing in `text`, in order of first occurrence.
pub fn identifiers(text: &str) -> Result<Vec<String>, ParseError> {
    let mut out: Vec<String> = Vec::new();
    for t in lex(text)? {
        if t.tok == Tok::Ident && !out.iter().any(|s| s == t.text) {
            out.push(t.text.to_string());
        }
    }
    Ok(out)
}

/// `e1, e2, … [on box]`; the default domain is `ℝ^k` with `k` the number
/// of variables used (at least one).
pub fn parse_smooth(text: &str) -> Result<SmoothMap, ParseError> {
    let mut p = Parser::new(text)?;
    let start = p.here();
    let comps = p.expr_list()?;
    let domain = if p.eat_ident("on") { p.domain_box()? } else { DomainBox::whole(default_dim(&comps)) };
    p.finish()?;
    SmoothMap::new(comps, domain).map_err(|e| start.error(e.to_string(), &[]))
}

pub fn parse_distribution(text: &str) -> Result<Distribution, ParseError> {
    let mut p = Parser::new(text)?;
    let d = p.distribution()?;
    p.finish()?;
    Ok(d)
}

pub fn parse_plmap(text: &str) -> Result<PLMap, ParseError> {
    let mut p = Parser::new(text)?;
    let g = p.plmap()?;
    p.finish()?;
    Ok(g)
}

const DIST_KEYWORDS: [&str; 4] = ["delta", "H", "fn", "pl"];

fn default_dim(comps: &[Expr]) -> usize {
    comps.iter().map(Expr::arity).max().unwrap_or(0).max(1)
}

fn var_index(name: &str) -> Option<usize> {
    VAR_NAMES
        .iter()
        .position(|v| *v == name)
        .or_else(|| name.strip_prefix('x').filter(|d| d.bytes().all(|b| b.is_ascii_digit())).and_then(|d| d.parse().ok()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tok {
    Num,
    Ident,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Prime,
    At,
    Arrow,
    Le,
    Eof,
}

impl Tok {
    fn describe(self) -> &'static str {
        match self {
            Tok::Num => "number",
            Tok::Ident => "identifier",
            Tok::Plus => "'+'",
            Tok::Minus => "'-'",
            Tok::Star => "'*'",
            Tok::Slash => "'/'",
            Tok::Caret => "'^'",
            Tok::LParen => "'('",
            Tok::RParen => "')'",
            Tok::LBracket => "'['",
            Tok::RBracket => "']'",
            Tok::LBrace => "'{'",
            Tok::RBrace => "'}'",
            Tok::Comma => "','",
            Tok::Semi => "';'",
            Tok::Prime => "'''",
            Tok::At => "'@'",
            Tok::Arrow => "'->'",
            Tok::Le => "'<='",
            Tok::Eof => "end of input",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Token<'a> {
    tok: Tok,
    text: &'a str,
    line: usize,
    column: usize,
}

impl Token<'_> {
    fn error(&self, message: impl Into<String>, expected: &[&str]) -> ParseError {
        ParseError {
            line: self.line,
            column: self.column,
            message: message.into(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn describe(&self) -> String {
        match self.tok {
            Tok::Num | Tok::Ident => format!("`{}`", self.text),
            t => t.describe().to_string(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<Token<'_>>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut line_start) = (0, 1, 0);
    while i < bytes.len() {
        let c = bytes[i];
        let column = text[line_start..i].chars().count() + 1;
        if c == b'\n' {
            i += 1;
            line += 1;
            line_start = i;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            Tok::Num
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            Tok::Ident
        } else {
            let (tok, len) = match (c, bytes.get(i + 1)) {
                (b'-', Some(b'>')) => (Tok::Arrow, 2),
                (b'<', Some(b'=')) => (Tok::Le, 2),
                (b'+', _) => (Tok::Plus, 1),
                (b'-', _) => (Tok::Minus, 1),
                (b'*', _) => (Tok::Star, 1),
                (b'/', _) => (Tok::Slash, 1),
                (b'^', _) => (Tok::Caret, 1),
                (b'(', _) => (Tok::LParen, 1),
                (b')', _) => (Tok::RParen, 1),
                (b'[', _) => (Tok::LBracket, 1),
                (b']', _) => (Tok::RBracket, 1),
                (b'{', _) => (Tok::LBrace, 1),
                (b'}', _) => (Tok::RBrace, 1),
                (b',', _) => (Tok::Comma, 1),
                (b';', _) => (Tok::Semi, 1),
                (b'\'', _) => (Tok::Prime, 1),
                (b'@', _) => (Tok::At, 1),
                _ => {
                    let ch = text[i..].chars().next().unwrap_or('?');
                    return Err(ParseError {
                        line,
                        column,
                        message: format!("unexpected character `{ch}`"),
                        expected: vec!["number".into(), "identifier".into(), "operator".into()],
                    });
                }
            };
            i += len;
            tok
        };
        out.push(Token { tok, text: &text[start..i], line, column });
    }
    let column = text[line_start..].chars().count() + 1;
    out.push(Token { tok: Tok::Eof, text: "", line, column });
    Ok(out)
}

const ATOM_START: [&str; 5] = ["number", "variable", "function", "'('", "'-'"];

struct Parser<'a> {
    toks: Vec<Token<'a>>,
    pos: usize,
    /// Variable names replacing the defaults.
    names: Option<Vec<String>>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Parser<'a>, ParseError> {
        Ok(Parser { toks: lex(text)?, pos: 0, names: None })
    }

    fn here(&self) -> Token<'a> {
        self.toks[self.pos]
    }

    fn peek_at(&self, k: usize) -> Token<'a> {
        self.toks[(self.pos + k).min(self.toks.len() - 1)]
    }

    fn bump(&mut self) -> Token<'a> {
        let t = self.here();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        let t = self.here();
        t.error(format!("unexpected {}", t.describe()), expected)
    }

    fn eat(&mut self, tok: Tok) -> bool {
        if self.here().tok == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<Token<'a>, ParseError> {
        if self.here().tok == tok {
            Ok(self.bump())
        } else {
            Err(self.unexpected(&[tok.describe()]))
        }
    }

    fn is_ident(&self, name: &str) -> bool {
        let t = self.here();
        t.tok == Tok::Ident && t.text == name
    }

    fn eat_ident(&mut self, name: &str) -> bool {
        if self.is_ident(name) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_ident(&mut self, name: &str) -> Result<Token<'a>, ParseError> {
        if self.is_ident(name) {
            Ok(self.bump())
        } else {
            Err(self.unexpected(&[&format!("`{name}`")]))
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.here().tok == Tok::Eof {
            Ok(())
        } else {
            Err(self.unexpected(&[Tok::Eof.describe()]))
        }
    }

    fn is_number_start(&self) -> bool {
        let t = self.here();
        t.tok == Tok::Num || (t.tok == Tok::Ident && matches!(t.text, "inf" | "NaN" | "pi"))
    }

    /// Unsigned numeric literal, `inf`, `NaN` or `pi`.
    fn literal(&mut self) -> Result<f64, ParseError> {
        let t = self.here();
        let v = match (t.tok, t.text) {
            (Tok::Num, s) => s.parse::<f64>().map_err(|_| t.error(format!("malformed number `{s}`"), &["number"]))?,
            (Tok::Ident, "inf") => f64::INFINITY,
            (Tok::Ident, "NaN") => f64::NAN,
            (Tok::Ident, "pi") => std::f64::consts::PI,
            _ => return Err(self.unexpected(&["number"])),
        };
        self.bump();
        Ok(v)
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        if self.eat(Tok::Minus) {
            Ok(-self.literal()?)
        } else {
            self.literal()
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        let neg = self.eat(Tok::Minus);
        let t = self.here();
        if t.tok != Tok::Num || !t.text.bytes().all(|b| b.is_ascii_digit()) {
            return Err(self.unexpected(&["integer"]));
        }
        let v: i64 = t.text.parse().map_err(|_| t.error("integer out of range", &["integer"]))?;
        self.bump();
        Ok(if neg { -v } else { v })
    }

    fn multi_index(&mut self) -> Result<MultiIndex, ParseError> {
        self.expect(Tok::LParen)?;
        let mut v = Vec::new();
        loop {
            let t = self.here();
            let a = self.int()?;
            v.push(u32::try_from(a).map_err(|_| t.error("derivative orders must be non-negative", &["integer"]))?);
            if !self.eat(Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        Ok(MultiIndex(v))
    }

    // expressions

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            if self.eat(Tok::Plus) {
                lhs = lhs + self.product()?;
            } else if self.eat(Tok::Minus) {
                lhs = lhs - self.product()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(Tok::Star) {
                lhs = lhs * self.unary()?;
            } else if self.eat(Tok::Slash) {
                lhs = lhs / self.unary()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.here().tok != Tok::Minus {
            return self.power();
        }
        self.bump();
        // a negative literal is a constant unless it is raised to a power
        if self.is_number_start() && self.peek_at(1).tok != Tok::Caret {
            return Ok(Expr::constant(-self.literal()?));
        }
        Ok(-self.unary()?)
    }

    fn is_integer_at(&self, k: usize) -> bool {
        let t = self.peek_at(k);
        t.tok == Tok::Num && t.text.bytes().all(|b| b.is_ascii_digit())
    }

    /// Length of an integer exponent at the cursor: `k`, `-k` or `(±k)`.
    fn integer_exponent_len(&self) -> Option<usize> {
        let sign = usize::from(self.peek_at(0).tok == Tok::Minus);
        if self.is_integer_at(sign) {
            return Some(sign + 1);
        }
        if self.here().tok == Tok::LParen {
            let sign = usize::from(self.peek_at(1).tok == Tok::Minus);
            if self.is_integer_at(1 + sign) && self.peek_at(2 + sign).tok == Tok::RParen {
                return Some(3 + sign);
            }
        }
        None
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if !self.eat(Tok::Caret) {
            return Ok(base);
        }
        if self.integer_exponent_len().is_none() {
            let exponent = self.unary()?;
            return Ok((exponent * base.ln()).exp());
        }
        let paren = self.eat(Tok::LParen);
        let t = self.here();
        let p = self.int()?;
        let p = i32::try_from(p).map_err(|_| t.error("exponent out of range", &["integer"]))?;
        if paren {
            self.expect(Tok::RParen)?;
        }
        Ok(base.powi(p))
    }

    fn expr_list(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut v = vec![self.expr()?];
        while self.eat(Tok::Comma) {
            v.push(self.expr()?);
        }
        Ok(v)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let t = self.here();
        match t.tok {
            Tok::Num => Ok(Expr::constant(self.literal()?)),
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident => {
                if self.is_number_start() {
                    return Ok(Expr::constant(self.literal()?));
                }
                let index = match &self.names {
                    Some(names) => names.iter().position(|v| v == t.text),
                    None => var_index(t.text),
                };
                if let Some(i) = index {
                    self.bump();
                    return Ok(Expr::var(i));
                }
                if let Some(f) = Func::from_name(t.text) {
                    self.bump();
                    self.expect(Tok::LParen)?;
                    let args = self.expr_list()?;
                    self.expect(Tok::RParen)?;
                    if args.len() != 1 {
                        return Err(t.error(format!("`{}` takes 1 argument, got {}", t.text, args.len()), &[]));
                    }
                    return Ok(args.into_iter().next().expect("one argument").unary(f));
                }
                if t.text == "D" && self.peek_at(1).tok == Tok::LParen {
                    self.bump();
                    let alpha = self.multi_index()?;
                    self.expect(Tok::LBracket)?;
                    let body = self.expr()?;
                    self.expect(Tok::RBracket)?;
                    self.expect(Tok::LParen)?;
                    let args = self.expr_list()?;
                    self.expect(Tok::RParen)?;
                    if args.len() != alpha.dim() {
                        return Err(t.error(
                            format!("derivative {alpha} takes {} arguments, got {}", alpha.dim(), args.len()),
                            &[],
                        ));
                    }
                    return Ok(Expr::new(Node::Diff { alpha, body, args }));
                }
                Err(t.error(format!("unknown identifier `{}`", t.text), &ATOM_START))
            }
            _ => Err(self.unexpected(&ATOM_START)),
        }
    }

    // boxes, points and arrays

    fn interval(&mut self) -> Result<(f64, f64), ParseError> {
        self.expect(Tok::LBracket)?;
        let a = self.number()?;
        self.expect(Tok::Comma)?;
        let b = self.number()?;
        self.expect(Tok::RBracket)?;
        Ok((a, b))
    }

    fn domain_box(&mut self) -> Result<DomainBox, ParseError> {
        let mut bounds = vec![self.interval()?];
        while self.is_ident("x") && self.peek_at(1).tok == Tok::LBracket {
            self.bump();
            bounds.push(self.interval()?);
        }
        Ok(DomainBox::new(bounds))
    }

    fn point(&mut self) -> Result<Vec<f64>, ParseError> {
        if !self.eat(Tok::LParen) {
            return Ok(vec![self.number()?]);
        }
        let mut v = vec![self.number()?];
        while self.eat(Tok::Comma) {
            v.push(self.number()?);
        }
        self.expect(Tok::RParen)?;
        Ok(v)
    }

    fn bracketed_numbers(&mut self) -> Result<Vec<f64>, ParseError> {
        self.expect(Tok::LBracket)?;
        let mut v = vec![self.number()?];
        while self.eat(Tok::Comma) {
            v.push(self.number()?);
        }
        self.expect(Tok::RBracket)?;
        Ok(v)
    }

    fn vector(&mut self) -> Result<Vec<f64>, ParseError> {
        if self.here().tok == Tok::LBracket {
            self.bracketed_numbers()
        } else {
            Ok(vec![self.number()?])
        }
    }

    fn matrix(&mut self) -> Result<Vec<Vec<f64>>, ParseError> {
        if self.here().tok != Tok::LBracket || self.peek_at(1).tok != Tok::LBracket {
            return Ok(vec![self.vector()?]);
        }
        self.bump();
        let mut rows = vec![self.bracketed_numbers()?];
        while self.eat(Tok::Comma) {
            rows.push(self.bracketed_numbers()?);
        }
        self.expect(Tok::RBracket)?;
        Ok(rows)
    }

    // distributions

    fn distribution(&mut self) -> Result<Distribution, ParseError> {
        let start = self.here();
        let mut terms = Vec::new();
        let zero = start.tok == Tok::Num && self.peek_at(1).tok != Tok::Star;
        if zero {
            if self.literal()? != 0.0 {
                return Err(start.error("a constant distribution must be 0", &["'*'"]));
            }
        } else {
            let sign = if self.eat(Tok::Minus) { -1.0 } else { 1.0 };
            terms.push(self.term(sign)?);
            loop {
                if self.eat(Tok::Plus) {
                    terms.push(self.term(1.0)?);
                } else if self.eat(Tok::Minus) {
                    terms.push(self.term(-1.0)?);
                } else {
                    break;
                }
            }
        }
        let domain = if self.eat_ident("in") {
            self.domain_box()?
        } else {
            DomainBox::whole(terms.iter().map(|t| t.base.dim()).max().unwrap_or(1))
        };
        Distribution::new(domain, terms).map_err(|e| start.error(e.to_string(), &[]))
    }

    fn term(&mut self, sign: f64) -> Result<Term, ParseError> {
        let coeff = if self.is_number_start() && self.peek_at(1).tok == Tok::Star {
            let c = self.literal()?;
            self.bump();
            c
        } else {
            1.0
        };
        let (alpha, base) = self.base(None)?;
        Ok(Term::new(sign * coeff, alpha, base))
    }

    fn primes(&mut self) -> u32 {
        let mut j = 0;
        while self.eat(Tok::Prime) {
            j += 1;
        }
        j
    }

    /// A base distribution with its derivative; `dim` is the dimension
    /// implied by an enclosing `D(α)`.
    fn base(&mut self, dim: Option<usize>) -> Result<(MultiIndex, Base), ParseError> {
        let t = self.here();
        if t.tok != Tok::Ident {
            return Err(self.unexpected(&["`delta`", "`H`", "`fn`", "`pl`", "`D`"]));
        }
        match t.text {
            "D" => {
                self.bump();
                let outer = self.multi_index()?;
                let (alpha, base) = self.base(Some(outer.dim()))?;
                if alpha.dim() != outer.dim() {
                    return Err(t.error(format!("derivative {outer} applied to a {}-D term", alpha.dim()), &[]));
                }
                Ok((alpha.add(&outer), base))
            }
            "delta" => {
                self.bump();
                let j = self.primes();
                let at = if self.eat(Tok::At) { self.point()? } else { vec![0.0; dim.unwrap_or(1)] };
                if j > 0 && at.len() != 1 {
                    return Err(t.error("prime marks apply to 1-D terms only", &[]));
                }
                let mut alpha = MultiIndex::zero(at.len());
                alpha.0[0] += j;
                Ok((alpha, Base::PointMass { at }))
            }
            "H" => {
                self.bump();
                let j = self.primes();
                let at = if self.eat(Tok::At) { self.number()? } else { 0.0 };
                Ok((MultiIndex(vec![j]), Base::Heaviside { at }))
            }
            "fn" => {
                self.bump();
                self.expect(Tok::LParen)?;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                self.expect_ident("on")?;
                let domain = self.domain_box()?;
                let k = domain.dim();
                let f = SmoothMap::scalar(e, domain).map_err(|e| t.error(e.to_string(), &[]))?;
                Ok((MultiIndex::zero(k), Base::Smooth { f }))
            }
            "pl" => {
                let g = self.plmap()?;
                Ok((MultiIndex::zero(g.in_dim()), Base::Piecewise(g)))
            }
            other => Err(t.error(format!("unknown identifier `{other}`"), &["`delta`", "`H`", "`fn`", "`pl`", "`D`"])),
        }
    }

    // piecewise maps

    fn plmap(&mut self) -> Result<PLMap, ParseError> {
        let start = self.expect_ident("pl")?;
        self.expect(Tok::LBrace)?;
        let mut pieces = vec![self.piece()?];
        while self.eat(Tok::Semi) {
            if self.here().tok == Tok::RBrace {
                break;
            }
            pieces.push(self.piece()?);
        }
        self.expect(Tok::RBrace)?;
        let domain = if self.eat_ident("on") { self.domain_box()? } else { hull(&pieces) };
        let extension = if self.eat_ident("ext") { self.domain_box()? } else { domain.clone() };
        let tol = if self.eat_ident("tol") { self.number()? } else { CONTINUITY_TOL };
        PLMap::with_extension(domain, extension, pieces, tol).map_err(|e| start.error(e.to_string(), &[]))
    }

    fn piece(&mut self) -> Result<Piece, ParseError> {
        let bounds = self.domain_box()?.bounds;
        let mut halfspaces = Vec::new();
        if self.eat_ident("where") {
            loop {
                let a = self.vector()?;
                self.expect(Tok::Le)?;
                halfspaces.push((a, self.number()?));
                if !self.eat(Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::Arrow)?;
        let k = bounds.len();
        let t = self.here();
        let map = if self.eat_ident("affine") {
            self.expect(Tok::LParen)?;
            let matrix = self.matrix()?;
            self.expect(Tok::Comma)?;
            let offset = self.vector()?;
            self.expect(Tok::RParen)?;
            PieceMap::Affine { matrix, offset }
        } else if self.eat_ident("fn") {
            self.expect(Tok::LParen)?;
            let comps = self.expr_list()?;
            self.expect(Tok::RParen)?;
            let domain = if self.eat_ident("on") { self.domain_box()? } else { DomainBox::whole(k) };
            PieceMap::Smooth(SmoothMap::new(comps, domain).map_err(|e| t.error(e.to_string(), &[]))?)
        } else {
            return Err(self.unexpected(&["`affine`", "`fn`"]));
        };
        Ok(Piece { cell: Cell { bounds, halfspaces }, map })
    }
}

fn hull(pieces: &[Piece]) -> DomainBox {
    let k = pieces[0].cell.bounds.len();
    let bounds = (0..k)
        .map(|i| {
            let lo = pieces.iter().filter_map(|p| p.cell.bounds.get(i)).map(|b| b.0).fold(f64::INFINITY, f64::min);
            let hi = pieces.iter().filter_map(|p| p.cell.bounds.get(i)).map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    DomainBox::new(bounds)
}

// printing

fn write_box(f: &mut fmt::Formatter<'_>, bounds: &[(f64, f64)]) -> fmt::Result {
    for (i, &(a, b)) in bounds.iter().enumerate() {
        if i > 0 {
            write!(f, "x")?;
        }
        write!(f, "[{}, {}]", fmt_num(a), fmt_num(b))?;
    }
    Ok(())
}

fn write_numbers(f: &mut fmt::Formatter<'_>, v: &[f64]) -> fmt::Result {
    write!(f, "[")?;
    for (i, a) in v.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{}", fmt_num(*a))?;
    }
    write!(f, "]")
}

fn write_vector(f: &mut fmt::Formatter<'_>, v: &[f64]) -> fmt::Result {
    if v.len() == 1 {
        write!(f, "{}", fmt_num(v[0]))
    } else {
        write_numbers(f, v)
    }
}

fn write_exprs(f: &mut fmt::Formatter<'_>, comps: &[Expr]) -> fmt::Result {
    for (i, e) in comps.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{e}")?;
    }
    Ok(())
}

fn is_plus_zero(v: f64) -> bool {
    v.to_bits() == 0
}

/// Prints a smooth map in the form read by [`parse_smooth`].
pub struct SmoothText<'a>(pub &'a SmoothMap);

impl fmt::Display for SmoothText<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.0;
        write_exprs(f, m.components())?;
        if *m.domain() != DomainBox::whole(default_dim(m.components())) {
            write!(f, " on ")?;
            write_box(f, &m.domain().bounds)?;
        }
        Ok(())
    }
}

impl fmt::Display for PLMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pl{{")?;
        for (i, p) in self.pieces().iter().enumerate() {
            write!(f, "{}", if i > 0 { "; " } else { "" })?;
            write_box(f, &p.cell.bounds)?;
            for (j, (a, c)) in p.cell.halfspaces.iter().enumerate() {
                write!(f, "{}", if j > 0 { ", " } else { " where " })?;
                write_vector(f, a)?;
                write!(f, " <= {}", fmt_num(*c))?;
            }
            write!(f, " -> ")?;
            match &p.map {
                PieceMap::Affine { matrix, offset } => {
                    write!(f, "affine(")?;
                    if matrix.len() == 1 && matrix[0].len() == 1 {
                        write!(f, "{}", fmt_num(matrix[0][0]))?;
                    } else {
                        write!(f, "[")?;
                        for (r, row) in matrix.iter().enumerate() {
                            write!(f, "{}", if r > 0 { ", " } else { "" })?;
                            write_numbers(f, row)?;
                        }
                        write!(f, "]")?;
                    }
                    write!(f, ", ")?;
                    write_vector(f, offset)?;
                    write!(f, ")")?;
                }
                PieceMap::Smooth(m) => {
                    write!(f, "fn(")?;
                    write_exprs(f, m.components())?;
                    write!(f, ")")?;
                    if *m.domain() != DomainBox::whole(p.cell.bounds.len()) {
                        write!(f, " on ")?;
                        write_box(f, &m.domain().bounds)?;
                    }
                }
            }
        }
        write!(f, "}}")?;
        if *self.domain() != hull(self.pieces()) {
            write!(f, " on ")?;
            write_box(f, &self.domain().bounds)?;
        }
        if self.extension() != self.domain() {
            write!(f, " ext ")?;
            write_box(f, &self.extension().bounds)?;
        }
        if self.tolerance().to_bits() != CONTINUITY_TOL.to_bits() {
            write!(f, " tol {}", fmt_num(self.tolerance()))?;
        }
        Ok(())
    }
}

fn write_base(f: &mut fmt::Formatter<'_>, alpha: &MultiIndex, base: &Base) -> fmt::Result {
    let primed = matches!(base, Base::Heaviside { .. }) || matches!(base, Base::PointMass { at } if at.len() == 1);
    if !primed && !alpha.is_zero() {
        write!(f, "D{alpha} ")?;
    }
    let primes = if primed { "'".repeat(alpha.0[0] as usize) } else { String::new() };
    match base {
        Base::PointMass { at } => {
            write!(f, "delta{primes}")?;
            if at.len() > 1 {
                write!(f, " @ (")?;
                for (i, a) in at.iter().enumerate() {
                    write!(f, "{}{}", if i > 0 { ", " } else { "" }, fmt_num(*a))?;
                }
                write!(f, ")")?;
            } else if !is_plus_zero(at[0]) {
                write!(f, " @ {}", fmt_num(at[0]))?;
            }
            Ok(())
        }
        Base::Heaviside { at } => {
            write!(f, "H{primes}")?;
            if !is_plus_zero(*at) {
                write!(f, " @ {}", fmt_num(*at))?;
            }
            Ok(())
        }
        Base::Smooth { f: m } => {
            write!(f, "fn({}) on ", m.component(0))?;
            write_box(f, &m.domain().bounds)
        }
        Base::Piecewise(g) => write!(f, "{g}"),
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            write!(f, "0")?;
        }
        for (i, t) in self.terms.iter().enumerate() {
            let c = t.coeff;
            let negative = c.is_sign_negative() && !c.is_nan();
            if i == 0 {
                match c {
                    _ if c == 1.0 => {}
                    _ if c == -1.0 => write!(f, "-")?,
                    _ => write!(f, "{}*", fmt_num(c))?,
                }
            } else {
                let m = if negative { -c } else { c };
                write!(f, " {} ", if negative { "-" } else { "+" })?;
                if m != 1.0 {
                    write!(f, "{}*", fmt_num(m))?;
                }
            }
            write_base(f, &t.alpha, &t.base)?;
        }
        let k = self.terms.iter().map(|t| t.base.dim()).max().unwrap_or(1);
        if self.domain != DomainBox::whole(k) {
            write!(f, " in ")?;
            write_box(f, &self.domain.bounds)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(text: &str) -> String {
        let d = parse_distribution(text).unwrap();
        let printed = d.to_string();
        assert_eq!(parse_distribution(&printed).unwrap(), d, "{printed}");
        printed
    }

    #[test]
    fn delta_prime_plus_heaviside() {
        let d = parse_distribution("delta' + 2*H").unwrap();
        assert_eq!(d.dim(), 1);
        assert_eq!(d.terms[0], Term::new(1.0, MultiIndex(vec![1]), Base::PointMass { at: vec![0.0] }));
        assert_eq!(d.terms[1], Term::new(2.0, MultiIndex(vec![0]), Base::Heaviside { at: 0.0 }));
    }

    #[test]
    fn located_point_mass() {
        let d = parse_distribution("delta @ 0.3").unwrap();
        assert_eq!(d.terms[0].base, Base::PointMass { at: vec![0.3] });
    }

    #[test]
    fn smooth_term() {
        let d = parse_distribution("fn(sin(x)*exp(-x^2)) on [-3,3]").unwrap();
        match &d.terms[0].base {
            Base::Smooth { f } => {
                assert_eq!(f.domain(), &DomainBox::interval(-3.0, 3.0));
                let v = f.eval_scalar(&[0.5]).unwrap();
                assert_eq!(v, 0.5f64.sin() * (-0.25f64).exp());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_literal_binds_below_power() {
        assert_eq!(parse_expr("-2^2").unwrap().eval(&[]).unwrap(), -4.0);
        assert_eq!(parse_expr("(-2)^2").unwrap().eval(&[]).unwrap(), 4.0);
        assert_eq!(parse_expr("x^(-2)").unwrap().eval(&[2.0]).unwrap(), 0.25);
    }

    #[test]
    fn real_exponents_and_custom_names() {
        let e = parse_expr_in("2^n + n^0.5 + n^(-1)", &["n"]).unwrap();
        assert!((e.eval(&[4.0]).unwrap() - 18.25).abs() < 1e-12);
        assert!(parse_expr_in("x", &["n"]).is_err());
        assert_eq!(identifiers("sin(x) + n*x").unwrap(), vec!["sin", "x", "n"]);
    }

    #[test]
    fn distributions_round_trip() {
        for text in [
            "delta' + 2*H",
            "-delta'' @ -0.5 - 3*H' @ 1 + 0.25*fn(x^2) on [-1, 1]",
            "D(1,0) delta @ (0.5, 0.25) in [0,1]x[0,1]",
            "pl{[0,1] -> affine(1, 0); [1,2] -> affine(-1, 2)}",
            "0 in [-1, 1]",
            "D(2) fn(bump(x)) on [-1,1] in [-2, 2]",
        ] {
            round_trip(text);
        }
    }

    #[test]
    fn plmap_round_trip() {
        let g = parse_plmap("pl{[0,1]x[0,1] where [1, -1] <= 0 -> affine([[1, 0]], 0); [0,1]x[0,1] where [-1, 1] <= 0 -> fn(y)}").unwrap();
        assert_eq!(g.eval(&[0.25, 0.5]).unwrap(), vec![0.25]);
        assert_eq!(parse_plmap(&g.to_string()).unwrap(), g);
        for k in 1..=2 {
            let p = crate::geometry::radial_retraction(k).unwrap();
            assert_eq!(parse_plmap(&p.to_string()).unwrap(), p);
        }
    }

    #[test]
    fn errors_carry_position_and_expectations() {
        let e = parse_expr("sin(x,\n  y)").unwrap_err();
        assert_eq!((e.line, e.column), (1, 1));
        assert!(e.message.contains("takes 1 argument"));
        let e = parse_expr("x + foo").unwrap_err();
        assert_eq!((e.line, e.column), (1, 5));
        assert!(e.message.contains("unknown identifier"));
        assert!(e.expected.contains(&"variable".to_string()));
        let e = parse_distribution("delta @").unwrap_err();
        assert_eq!(e.column, 8);
        assert_eq!(e.expected, vec!["number".to_string()]);
    }

    #[test]
    fn dispatch_by_keywords() {
        assert!(matches!(parse_expression("delta").unwrap(), Parsed::Distribution(_)));
        assert!(matches!(parse_expression("x*y on [0,1]x[0,1]").unwrap(), Parsed::Smooth(_)));
    }
}
