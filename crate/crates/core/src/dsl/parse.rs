//! Recursive-descent parser for the query text format.
//!
//! ```text
//! query := graph (";" graph)*
//! graph := "Duration" "(" body "," int ")" | body
//! body  := "(" atom ("," atom)* ")" | atom
//! atom  := Name "(" var ("," var)? ("," "'" const "'")? ")"
//! ```

use std::sync::Arc;

use super::{DslError, PredicateAtom, Query, RegionGraphSpec, Var, MAX_VARS};
use crate::predicates::PredicateRegistry;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(u32),
    Str(String),
    LParen,
    RParen,
    Comma,
    Semi,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, DslError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push((start, Tok::LParen)),
            b')' => out.push((start, Tok::RParen)),
            b',' => out.push((start, Tok::Comma)),
            b';' => out.push((start, Tok::Semi)),
            b'\'' => {
                let end = text[i + 1..].find('\'').ok_or(DslError::Syntax {
                    pos: start,
                    message: "unterminated constant".into(),
                })?;
                out.push((start, Tok::Str(text[i + 1..i + 1 + end].to_string())));
                i += end + 2;
                continue;
            }
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let n = text[start..i].parse().map_err(|_| DslError::Syntax {
                    pos: start,
                    message: "integer too large".into(),
                })?;
                out.push((start, Tok::Int(n)));
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            _ => {
                return Err(DslError::Syntax {
                    pos: start,
                    message: format!("unexpected character {:?}", text[start..].chars().next().unwrap_or('?')),
                })
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
    registry: &'a PredicateRegistry,
    max_vars: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, DslError> {
        Err(DslError::Syntax {
            pos: self.pos(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), DslError> {
        if self.peek() == Some(&tok) {
            self.at += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn query(&mut self) -> Result<Query, DslError> {
        let mut graphs = vec![self.graph()?];
        while self.peek() == Some(&Tok::Semi) {
            self.at += 1;
            graphs.push(self.graph()?);
        }
        if self.at < self.toks.len() {
            return self.err("expected ';' or end of input");
        }
        Ok(Query::new(graphs))
    }

    fn graph(&mut self) -> Result<RegionGraphSpec, DslError> {
        let is_duration = matches!(self.peek(), Some(Tok::Ident(n)) if n == "Duration")
            && matches!(self.toks.get(self.at + 1), Some((_, Tok::LParen)));
        if !is_duration {
            return Ok(RegionGraphSpec::new(self.body()?, 1));
        }
        self.at += 2;
        let atoms = self.body()?;
        self.expect(Tok::Comma, "',' before duration")?;
        let d = match self.peek() {
            Some(Tok::Int(n)) => *n,
            _ => return self.err("expected duration"),
        };
        if d == 0 {
            return Err(DslError::Duration);
        }
        self.at += 1;
        self.expect(Tok::RParen, "')' closing Duration")?;
        Ok(RegionGraphSpec::new(atoms, d))
    }

    fn body(&mut self) -> Result<Vec<PredicateAtom>, DslError> {
        if self.peek() != Some(&Tok::LParen) {
            return Ok(vec![self.atom()?]);
        }
        self.at += 1;
        let mut atoms = vec![self.atom()?];
        while self.peek() == Some(&Tok::Comma) {
            self.at += 1;
            atoms.push(self.atom()?);
        }
        self.expect(Tok::RParen, "')' closing region graph")?;
        Ok(atoms)
    }

    fn atom(&mut self) -> Result<PredicateAtom, DslError> {
        let pos = self.pos();
        let name = match self.peek() {
            Some(Tok::Ident(n)) => n.clone(),
            _ => return self.err("expected predicate name"),
        };
        let def = self
            .registry
            .get(&name)
            .ok_or_else(|| DslError::UnknownPredicate { name: name.clone(), pos })?;
        self.at += 1;
        self.expect(Tok::LParen, "'(' after predicate name")?;
        let mut vars = Vec::new();
        let mut constant = None;
        loop {
            let arg_pos = self.pos();
            match self.peek().cloned() {
                Some(Tok::Ident(v)) if constant.is_none() => {
                    let n = parse_var(&v).ok_or(DslError::Syntax {
                        pos: arg_pos,
                        message: format!("expected variable like o1, found {v}"),
                    })?;
                    if n > self.max_vars {
                        return Err(DslError::VariableLimit { var: n, max: self.max_vars, pos: arg_pos });
                    }
                    vars.push(Var((n - 1) as u8));
                }
                Some(Tok::Str(s)) if constant.is_none() => constant = Some(s),
                _ => return self.err("expected variable or quoted constant"),
            }
            self.at += 1;
            match self.peek() {
                Some(Tok::Comma) => self.at += 1,
                Some(Tok::RParen) => {
                    self.at += 1;
                    break;
                }
                _ => return self.err("expected ',' or ')'"),
            }
        }
        if vars.len() != def.arity.count() {
            return Err(DslError::Arity {
                name,
                pos,
                expected: def.arity.count(),
                got: vars.len(),
            });
        }
        if vars.len() == 2 && vars[0] == vars[1] {
            return Err(DslError::RepeatedVariable { name, pos });
        }
        match (&constant, def.needs_constant()) {
            (None, true) => {
                return Err(DslError::Constant { name, pos, message: "missing constant".into() });
            }
            (Some(_), false) => {
                return Err(DslError::Constant { name, pos, message: "takes no constant".into() });
            }
            (Some(c), true) if !def.const_domain.contains(c) => {
                return Err(DslError::Constant {
                    name,
                    pos,
                    message: format!("{c:?} is not one of {:?}", def.const_domain),
                });
            }
            _ => {}
        }
        Ok(PredicateAtom {
            pred: Arc::from(def.name.as_str()),
            vars,
            constant: constant.map(|c| Arc::from(c.as_str())),
        })
    }
}

fn parse_var(s: &str) -> Option<usize> {
    let n: usize = s.strip_prefix('o')?.parse().ok()?;
    (n >= 1 && !s[1..].starts_with('0')).then_some(n)
}

/// Parses a query, allowing up to [`MAX_VARS`] variables.
pub fn parse(text: &str, registry: &PredicateRegistry) -> Result<Query, DslError> {
    parse_with_limit(text, registry, MAX_VARS)
}

/// Parses a query, rejecting variables beyond `o{max_vars}`.
pub fn parse_with_limit(text: &str, registry: &PredicateRegistry, max_vars: usize) -> Result<Query, DslError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(DslError::Syntax { pos: 0, message: "empty query".into() });
    }
    let mut p = Parser {
        toks,
        at: 0,
        end: text.len(),
        registry,
        max_vars: max_vars.min(MAX_VARS),
    };
    let q = p.query()?;
    if !q.vars_form_prefix() {
        let mask = q.var_mask();
        let missing = (0..32).find(|i| mask & (1 << i) == 0).unwrap_or(0) + 1;
        return Err(DslError::VariableGap { missing });
    }
    Ok(q)
}
