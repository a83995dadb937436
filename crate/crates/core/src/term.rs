//! Terms, tokens and canonical variant keys.
//!
//! A call `p(X, 1, Y)` is canonicalised into the token sequence
//! `[p/3, var(0), int(1), var(1)]`; two calls are variants exactly when their
//! sequences are equal. Answers are stored as the token sequence of the
//! substitution for the call's variables.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use once_cell::sync::Lazy;
use parking_lot::RwLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TermError {
    #[error("compound term {name} declares arity {arity} but has {len} arguments")]
    ArityMismatch { name: String, arity: u32, len: usize },
    #[error("integer {0} does not fit in a 61-bit token")]
    IntOutOfRange(i64),
    #[error("term is not callable: {0}")]
    NotCallable(String),
    #[error("answer does not instantiate the call pattern: {0}")]
    AnswerMismatch(String),
    #[error("token sequence is malformed")]
    MalformedTokens,
}

/// Interned symbol (atom or functor name).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sym(u32);

struct Interner {
    names: Vec<Arc<str>>,
    ids: HashMap<Arc<str>, u32>,
}

static INTERNER: Lazy<RwLock<Interner>> = Lazy::new(|| {
    RwLock::new(Interner {
        names: Vec::new(),
        ids: HashMap::new(),
    })
});

impl Sym {
    pub fn intern(name: &str) -> Sym {
        if let Some(&id) = INTERNER.read().ids.get(name) {
            return Sym(id);
        }
        let mut w = INTERNER.write();
        if let Some(&id) = w.ids.get(name) {
            return Sym(id);
        }
        let id = w.names.len() as u32;
        let s: Arc<str> = Arc::from(name);
        w.names.push(s.clone());
        w.ids.insert(s, id);
        Sym(id)
    }

    pub fn name(self) -> Arc<str> {
        INTERNER.read().names[self.0 as usize].clone()
    }

    pub fn index(self) -> u32 {
        self.0
    }

    fn from_index(i: u32) -> Sym {
        Sym(i)
    }
}

impl fmt::Debug for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl fmt::Display for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Predicate identity: name and arity.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct PredId {
    pub name: Sym,
    pub arity: u32,
}

impl PredId {
    pub fn new(name: &str, arity: u32) -> Self {
        PredId {
            name: Sym::intern(name),
            arity,
        }
    }
}

impl fmt::Display for PredId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Atom(Sym),
    Int(i64),
    Var(u32),
    Compound {
        functor: Sym,
        arity: u32,
        args: Arc<[Term]>,
    },
}

impl Term {
    pub fn atom(name: &str) -> Term {
        Term::Atom(Sym::intern(name))
    }

    pub fn compound(name: &str, args: Vec<Term>) -> Term {
        Term::Compound {
            functor: Sym::intern(name),
            arity: args.len() as u32,
            args: args.into(),
        }
    }

    pub fn from_sym(functor: Sym, args: Vec<Term>) -> Term {
        if args.is_empty() {
            return Term::Atom(functor);
        }
        Term::Compound {
            functor,
            arity: args.len() as u32,
            args: args.into(),
        }
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Compound { args, .. } => args.iter().all(Term::is_ground),
            _ => true,
        }
    }

    /// Predicate identity of a callable term.
    pub fn pred(&self) -> Result<PredId, TermError> {
        match self {
            Term::Atom(s) => Ok(PredId { name: *s, arity: 0 }),
            Term::Compound { functor, arity, .. } => Ok(PredId {
                name: *functor,
                arity: *arity,
            }),
            other => Err(TermError::NotCallable(format!("{other}"))),
        }
    }

    pub fn args(&self) -> &[Term] {
        match self {
            Term::Compound { args, .. } => args,
            _ => &[],
        }
    }

    pub fn validate(&self) -> Result<(), TermError> {
        match self {
            Term::Int(i) => Token::check_int(*i),
            Term::Compound {
                functor,
                arity,
                args,
            } => {
                if *arity as usize != args.len() || args.is_empty() {
                    return Err(TermError::ArityMismatch {
                        name: functor.name().to_string(),
                        arity: *arity,
                        len: args.len(),
                    });
                }
                args.iter().try_for_each(Term::validate)
            }
            _ => Ok(()),
        }
    }

    /// Largest variable index plus one.
    pub fn var_bound(&self) -> u32 {
        match self {
            Term::Var(v) => v + 1,
            Term::Compound { args, .. } => args.iter().map(Term::var_bound).max().unwrap_or(0),
            _ => 0,
        }
    }

    /// Rebuilds a term from a pre-order token sequence. Returns the term and
    /// the number of tokens consumed.
    pub fn from_tokens(tokens: &[Token]) -> Result<(Term, usize), TermError> {
        fn go(tokens: &[Token], pos: &mut usize) -> Result<Term, TermError> {
            let t = *tokens.get(*pos).ok_or(TermError::MalformedTokens)?;
            *pos += 1;
            Ok(match t {
                Token::Atom(s) => Term::Atom(s),
                Token::Int(i) => Term::Int(i),
                Token::Var(v) => Term::Var(v),
                Token::Functor(f, n) => {
                    let mut args = Vec::with_capacity(n as usize);
                    for _ in 0..n {
                        args.push(go(tokens, pos)?);
                    }
                    Term::Compound {
                        functor: f,
                        arity: n,
                        args: args.into(),
                    }
                }
                Token::Unit => return Err(TermError::MalformedTokens),
            })
        }
        let mut pos = 0;
        let t = go(tokens, &mut pos)?;
        Ok((t, pos))
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Atom(s) => write!(f, "{s}"),
            Term::Int(i) => write!(f, "{i}"),
            Term::Var(v) => write!(f, "_V{v}"),
            Term::Compound { functor, args, .. } => {
                write!(f, "{functor}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// A single trie label.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum Token {
    Atom(Sym),
    Int(i64),
    Var(u32),
    Functor(Sym, u32),
    /// Label of the single answer of a ground call or of an arity-0 key.
    Unit,
}

const TAG_BITS: u32 = 3;
const TAG_MASK: u64 = 7;
const TAG_ATOM: u64 = 1;
const TAG_INT: u64 = 2;
const TAG_VAR: u64 = 3;
const TAG_FUNCTOR: u64 = 4;
const TAG_UNIT: u64 = 5;

pub const INT_MIN: i64 = -(1 << 60);
pub const INT_MAX: i64 = (1 << 60) - 1;

impl Token {
    fn check_int(i: i64) -> Result<(), TermError> {
        if (INT_MIN..=INT_MAX).contains(&i) {
            Ok(())
        } else {
            Err(TermError::IntOutOfRange(i))
        }
    }

    /// Packs the token into a non-zero machine word.
    pub fn to_word(self) -> u64 {
        match self {
            Token::Atom(s) => ((s.0 as u64) << TAG_BITS) | TAG_ATOM,
            Token::Int(i) => ((i as u64) << TAG_BITS) | TAG_INT,
            Token::Var(v) => ((v as u64) << TAG_BITS) | TAG_VAR,
            Token::Functor(s, n) => ((s.0 as u64) << 35) | ((n as u64) << TAG_BITS) | TAG_FUNCTOR,
            Token::Unit => TAG_UNIT,
        }
    }

    pub fn from_word(w: u64) -> Token {
        match w & TAG_MASK {
            TAG_ATOM => Token::Atom(Sym::from_index((w >> TAG_BITS) as u32)),
            TAG_INT => Token::Int((w as i64) >> TAG_BITS),
            TAG_VAR => Token::Var((w >> TAG_BITS) as u32),
            TAG_FUNCTOR => Token::Functor(
                Sym::from_index((w >> 35) as u32),
                ((w >> TAG_BITS) & 0xffff_ffff) as u32,
            ),
            TAG_UNIT => Token::Unit,
            _ => panic!("invalid token word {w:#x}"),
        }
    }
}

/// Appends the pre-order tokens of `t`, renaming variables by first
/// occurrence through `names`.
pub fn push_tokens(
    t: &Term,
    names: &mut Vec<u32>,
    out: &mut Vec<Token>,
) -> Result<(), TermError> {
    match t {
        Term::Atom(s) => out.push(Token::Atom(*s)),
        Term::Int(i) => {
            Token::check_int(*i)?;
            out.push(Token::Int(*i));
        }
        Term::Var(v) => {
            let k = match names.iter().position(|n| n == v) {
                Some(k) => k,
                None => {
                    names.push(*v);
                    names.len() - 1
                }
            };
            out.push(Token::Var(k as u32));
        }
        Term::Compound {
            functor,
            arity,
            args,
        } => {
            if *arity as usize != args.len() || args.is_empty() {
                return Err(TermError::ArityMismatch {
                    name: functor.name().to_string(),
                    arity: *arity,
                    len: args.len(),
                });
            }
            out.push(Token::Functor(*functor, *arity));
            for a in args.iter() {
                push_tokens(a, names, out)?;
            }
        }
    }
    Ok(())
}

/// Canonical variant key of a call.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct SubgoalKey {
    pub pred: PredId,
    /// Full sequence, starting with the predicate token.
    pub tokens: Vec<Token>,
    /// Number of distinct variables in the call.
    pub nvars: u32,
}

impl SubgoalKey {
    /// Tokens stored in the subgoal trie (the arguments, or `Unit` for
    /// arity 0).
    pub fn trie_tokens(&self) -> &[Token] {
        &self.tokens[1..]
    }

    /// The call pattern with variables numbered `0..nvars`.
    pub fn pattern(&self) -> Term {
        if self.pred.arity == 0 {
            return Term::Atom(self.pred.name);
        }
        let (t, _) = Term::from_tokens(&self.tokens).expect("key tokens are well formed");
        t
    }
}

/// Canonicalises a call. Variables are renumbered by first occurrence.
pub fn canonicalize(goal: &Term) -> Result<SubgoalKey, TermError> {
    let pred = goal.pred()?;
    let mut names = Vec::new();
    let mut tokens = Vec::with_capacity(8);
    match goal {
        Term::Atom(s) => {
            tokens.push(Token::Functor(*s, 0));
            tokens.push(Token::Unit);
        }
        _ => push_tokens(goal, &mut names, &mut tokens)?,
    }
    Ok(SubgoalKey {
        pred,
        tokens,
        nvars: names.len() as u32,
    })
}

/// Variant check on arbitrary well-formed terms.
pub fn is_variant(a: &Term, b: &Term) -> bool {
    let mut na = Vec::new();
    let mut nb = Vec::new();
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    match (push_tokens(a, &mut na, &mut ta), push_tokens(b, &mut nb, &mut tb)) {
        (Ok(()), Ok(())) => ta == tb,
        _ => false,
    }
}

/// Tokens of a substitution list, with its variables renamed canonically
/// across the whole list. An empty substitution encodes as `[Unit]`.
pub fn subst_tokens(subst: &[Term]) -> Result<Vec<Token>, TermError> {
    if subst.is_empty() {
        return Ok(vec![Token::Unit]);
    }
    let mut names = Vec::new();
    let mut out = Vec::with_capacity(subst.len() * 2);
    for t in subst {
        push_tokens(t, &mut names, &mut out)?;
    }
    Ok(out)
}

/// Decodes the output of [`subst_tokens`] back into `n` terms.
pub fn decode_subst(tokens: &[Token], n: u32) -> Result<Vec<Term>, TermError> {
    if n == 0 {
        return match tokens {
            [Token::Unit] => Ok(Vec::new()),
            _ => Err(TermError::MalformedTokens),
        };
    }
    let mut out = Vec::with_capacity(n as usize);
    let mut pos = 0;
    for _ in 0..n {
        let (t, used) = Term::from_tokens(&tokens[pos..])?;
        pos += used;
        out.push(t);
    }
    if pos != tokens.len() {
        return Err(TermError::MalformedTokens);
    }
    Ok(out)
}

/// Substitutes `Var(k)` by `subst[k]`.
pub fn instantiate(t: &Term, subst: &[Term]) -> Term {
    match t {
        Term::Var(v) => subst[*v as usize].clone(),
        Term::Compound {
            functor,
            arity,
            args,
        } => Term::Compound {
            functor: *functor,
            arity: *arity,
            args: args.iter().map(|a| instantiate(a, subst)).collect(),
        },
        other => other.clone(),
    }
}

/// Answer token sequence for `answer` relative to the call `key`: the
/// substitution of the call's variables, canonically renamed.
pub fn answer_tokens(key: &SubgoalKey, answer: &Term) -> Result<Vec<Token>, TermError> {
    let pattern = key.pattern();
    let mut subst: Vec<Option<Term>> = vec![None; key.nvars as usize];
    fn matches(p: &Term, a: &Term, subst: &mut [Option<Term>]) -> bool {
        match (p, a) {
            (Term::Var(k), _) => match &subst[*k as usize] {
                Some(prev) => prev == a,
                None => {
                    subst[*k as usize] = Some(a.clone());
                    true
                }
            },
            (
                Term::Compound {
                    functor: f1,
                    args: a1,
                    ..
                },
                Term::Compound {
                    functor: f2,
                    args: a2,
                    ..
                },
            ) => {
                f1 == f2
                    && a1.len() == a2.len()
                    && a1.iter().zip(a2.iter()).all(|(x, y)| matches(x, y, subst))
            }
            (x, y) => x == y,
        }
    }
    answer.validate()?;
    if !matches(&pattern, answer, &mut subst) {
        return Err(TermError::AnswerMismatch(format!("{answer} vs {pattern}")));
    }
    let subst: Vec<Term> = subst.into_iter().map(|t| t.expect("every var bound")).collect();
    subst_tokens(&subst)
}
