//! Reader for the program text format.
//!
//! ```text
//! % comment
//! :- table path/2.
//! :- table sp(index, index, min).
//! edge(1, 2).
//! path(X, Z) :- path(X, Y), edge(Y, Z).
//! sp(X, Y, D) :- sp(X, Z, D1), w(Z, Y, D2), D is D1 + D2.
//! ```

use std::collections::HashMap;

use super::{EngineError, Program};
use crate::tablespace::Mode;
use crate::term::{PredId, Term};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Atom(String),
    Var(String),
    Int(i64),
    Punct(&'static str),
    End,
}

const PUNCTS: [&str; 18] = [
    ":-", "=:=", "=\\=", "\\=", "=<", ">=", "//", "(", ")", ",", "/", "+", "-", "*", "=", "<", ">", "|",
];

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Lexer<'a> {
    fn err(&self, msg: impl Into<String>) -> EngineError {
        EngineError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() {
            match self.src[self.pos] {
                b'\n' => {
                    self.line += 1;
                    self.pos += 1;
                }
                b' ' | b'\t' | b'\r' => self.pos += 1,
                b'%' => {
                    while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, usize), EngineError> {
        self.skip_ws();
        let line = self.line;
        if self.pos >= self.src.len() {
            return Ok((Tok::End, line));
        }
        let c = self.src[self.pos];
        let ident = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
        if c.is_ascii_digit() {
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let v = s.parse::<i64>().map_err(|_| self.err(format!("integer {s} too large")))?;
            return Ok((Tok::Int(v), line));
        }
        if c.is_ascii_lowercase() {
            let start = self.pos;
            while self.pos < self.src.len() && ident(self.src[self.pos]) {
                self.pos += 1;
            }
            let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            return Ok((Tok::Atom(s.to_string()), line));
        }
        if c.is_ascii_uppercase() || c == b'_' {
            let start = self.pos;
            while self.pos < self.src.len() && ident(self.src[self.pos]) {
                self.pos += 1;
            }
            let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            return Ok((Tok::Var(s.to_string()), line));
        }
        if c == b'\'' {
            let start = self.pos + 1;
            let mut end = start;
            while end < self.src.len() && self.src[end] != b'\'' {
                end += 1;
            }
            if end >= self.src.len() {
                return Err(self.err("unterminated quoted atom"));
            }
            self.pos = end + 1;
            let s = String::from_utf8_lossy(&self.src[start..end]).into_owned();
            return Ok((Tok::Atom(s), line));
        }
        if c == b'.' {
            let after = self.src.get(self.pos + 1).copied();
            if after.is_none() || matches!(after, Some(b' ' | b'\n' | b'\t' | b'\r' | b'%')) {
                self.pos += 1;
                return Ok((Tok::Punct("."), line));
            }
        }
        for p in PUNCTS {
            if self.src[self.pos..].starts_with(p.as_bytes()) {
                self.pos += p.len();
                return Ok((Tok::Punct(p), line));
            }
        }
        Err(self.err(format!("unexpected character {:?}", c as char)))
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
    tok: Tok,
    line: usize,
    vars: HashMap<String, u32>,
    nvars: u32,
}

const INFIX: [&str; 9] = ["is", "=", "\\=", "<", ">", "=<", ">=", "=:=", "=\\="];

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, EngineError> {
        let mut lex = Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
        };
        let (tok, line) = lex.next()?;
        Ok(Parser {
            lex,
            tok,
            line,
            vars: HashMap::new(),
            nvars: 0,
        })
    }

    fn err(&self, msg: impl Into<String>) -> EngineError {
        EngineError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn bump(&mut self) -> Result<Tok, EngineError> {
        let (t, l) = self.lex.next()?;
        self.line = l;
        Ok(std::mem::replace(&mut self.tok, t))
    }

    fn is(&self, p: &str) -> bool {
        matches!(&self.tok, Tok::Punct(q) if *q == p)
    }

    fn expect(&mut self, p: &str) -> Result<(), EngineError> {
        if self.is(p) {
            self.bump()?;
            Ok(())
        } else {
            Err(self.err(format!("expected '{p}', found {:?}", self.tok)))
        }
    }

    fn var(&mut self, name: &str) -> Term {
        if name == "_" {
            self.nvars += 1;
            return Term::Var(self.nvars - 1);
        }
        if let Some(&v) = self.vars.get(name) {
            return Term::Var(v);
        }
        self.vars.insert(name.to_string(), self.nvars);
        self.nvars += 1;
        Term::Var(self.nvars - 1)
    }

    fn primary(&mut self) -> Result<Term, EngineError> {
        match self.bump()? {
            Tok::Int(i) => Ok(Term::Int(i)),
            Tok::Punct("-") => match self.bump()? {
                Tok::Int(i) => Ok(Term::Int(-i)),
                t => Err(self.err(format!("expected a number after '-', found {t:?}"))),
            },
            Tok::Var(v) => Ok(self.var(&v)),
            Tok::Punct("(") => {
                let t = self.expr()?;
                self.expect(")")?;
                Ok(t)
            }
            Tok::Atom(a) => {
                if self.is("(") {
                    self.bump()?;
                    let mut args = vec![self.expr()?];
                    while self.is(",") {
                        self.bump()?;
                        args.push(self.expr()?);
                    }
                    self.expect(")")?;
                    Ok(Term::compound(&a, args))
                } else {
                    Ok(Term::atom(&a))
                }
            }
            t => Err(self.err(format!("unexpected {t:?}"))),
        }
    }

    fn product(&mut self) -> Result<Term, EngineError> {
        let mut t = self.primary()?;
        loop {
            let op = match &self.tok {
                Tok::Punct("*") => "*",
                Tok::Punct("//") => "//",
                Tok::Atom(a) if a == "mod" => "mod",
                _ => return Ok(t),
            };
            self.bump()?;
            let r = self.primary()?;
            t = Term::compound(op, vec![t, r]);
        }
    }

    fn expr(&mut self) -> Result<Term, EngineError> {
        let mut t = self.product()?;
        loop {
            let op = match &self.tok {
                Tok::Punct("+") => "+",
                Tok::Punct("-") => "-",
                _ => return Ok(t),
            };
            self.bump()?;
            let r = self.product()?;
            t = Term::compound(op, vec![t, r]);
        }
    }

    fn goal(&mut self) -> Result<Term, EngineError> {
        let l = self.expr()?;
        let op = match &self.tok {
            Tok::Punct(p) if INFIX.contains(p) => p.to_string(),
            Tok::Atom(a) if a == "is" => "is".to_string(),
            _ => return Ok(l),
        };
        self.bump()?;
        let r = self.expr()?;
        Ok(Term::compound(&op, vec![l, r]))
    }

    fn table_spec(&mut self, prog: &mut Program) -> Result<(), EngineError> {
        let name = match self.bump()? {
            Tok::Atom(a) => a,
            t => return Err(self.err(format!("expected a predicate name, found {t:?}"))),
        };
        if self.is("/") {
            self.bump()?;
            let arity = match self.bump()? {
                Tok::Int(i) if i >= 0 => i as u32,
                t => return Err(self.err(format!("expected an arity, found {t:?}"))),
            };
            return prog.table(PredId::new(&name, arity), None);
        }
        self.expect("(")?;
        let mut modes = Vec::new();
        loop {
            match self.bump()? {
                Tok::Atom(m) => modes.push(m.parse::<Mode>().map_err(|e| self.err(e))?),
                t => return Err(self.err(format!("expected a mode, found {t:?}"))),
            }
            if self.is(",") {
                self.bump()?;
            } else {
                break;
            }
        }
        self.expect(")")?;
        prog.table(PredId::new(&name, modes.len() as u32), Some(modes))
    }

    fn program(&mut self, prog: &mut Program) -> Result<(), EngineError> {
        while self.tok != Tok::End {
            self.vars.clear();
            self.nvars = 0;
            if self.is(":-") {
                self.bump()?;
                match self.bump()? {
                    Tok::Atom(a) if a == "table" => {}
                    t => return Err(self.err(format!("unknown directive {t:?}"))),
                }
                self.table_spec(prog)?;
                while self.is(",") {
                    self.bump()?;
                    self.table_spec(prog)?;
                }
                self.expect(".")?;
                continue;
            }
            let line = self.line;
            let head = self.goal()?;
            let mut body = Vec::new();
            if self.is(":-") {
                self.bump()?;
                body.push(self.goal()?);
                while self.is(",") {
                    self.bump()?;
                    body.push(self.goal()?);
                }
            }
            self.expect(".")?;
            let r = if body.is_empty() && head.is_ground() {
                prog.add_fact(head)
            } else {
                prog.add_rule(head, body)
            };
            r.map_err(|e| match e {
                EngineError::Program(m) => EngineError::Parse { line, msg: m },
                other => other,
            })?;
        }
        Ok(())
    }
}

pub(super) fn parse_into(src: &str, prog: &mut Program) -> Result<(), EngineError> {
    Parser::new(src)?.program(prog)
}

/// Parses a single goal such as `path(X, Y)`.
pub fn parse_goal(src: &str) -> Result<Term, EngineError> {
    let mut p = Parser::new(src)?;
    let t = p.goal()?;
    if p.is(".") {
        p.bump()?;
    }
    if p.tok != Tok::End {
        return Err(p.err(format!("trailing input {:?}", p.tok)));
    }
    Ok(t)
}
