//! Meaning-representation graphs in PENMAN notation, triple-matching
//! similarity, and the score ensemble that combines it with cosine scores.

mod ensemble;
mod smatch;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

pub use ensemble::{
    ensemble, pair_seed, run_staged, write_ensemble_csv, write_ensemble_jsonl, EnsembleConfig, EnsembleRow,
    EnsembleRun, EnsembleScore, EnsembleWeights, GraphStore, ENSEMBLE_COLUMNS,
};
pub use smatch::{smatch, SmatchScore, DEFAULT_RESTARTS};

#[derive(Debug, Error)]
pub enum AmrError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("variable {0:?} is defined more than once")]
    DuplicateVariable(String),
    #[error("variable {0:?} is referenced but never defined")]
    DanglingReference(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("ensemble weights must be non-negative and sum to 1, got ({semantic}, {structural})")]
    InvalidWeights { semantic: f64, structural: f64 },
    #[error("graph sidecar line {line}: {message}")]
    Sidecar { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AmrError> = std::result::Result<T, E>;

pub const INSTANCE: &str = "instance";

/// Roles that end in `-of` without being inverses.
const NON_INVERSE_OF: &[&str] = &["consist-of", "prep-on-behalf-of", "prep-out-of"];

/// Splits an inverse role (`ARG0-of`) into its base role.
fn inverse_base(role: &str) -> Option<&str> {
    if NON_INVERSE_OF.contains(&role) {
        return None;
    }
    role.strip_suffix("-of").filter(|b| !b.is_empty())
}

/// Bare symbols that look like variables; undefined ones are dangling.
fn looks_like_variable(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase()) && chars.all(|c| c.is_ascii_digit())
}

/// A rooted, connected graph. Variables carry exactly one concept; relation
/// and attribute triples are deduplicated and kept in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmrGraph {
    root: usize,
    variables: Vec<String>,
    concepts: Vec<String>,
    relations: Vec<(usize, String, usize)>,
    attributes: Vec<(usize, String, String)>,
}

impl AmrGraph {
    /// Builds and validates a graph from named triples. Inverse roles are
    /// not normalized here; pass relations in their canonical direction.
    pub fn new(
        root: &str,
        instances: &[(&str, &str)],
        relations: &[(&str, &str, &str)],
        attributes: &[(&str, &str, &str)],
    ) -> Result<Self> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut variables = Vec::new();
        let mut concepts = Vec::new();
        for &(v, c) in instances {
            if index.insert(v, variables.len()).is_some() {
                return Err(AmrError::DuplicateVariable(v.to_string()));
            }
            variables.push(v.to_string());
            concepts.push(c.to_string());
        }
        let lookup = |v: &str| index.get(v).copied().ok_or_else(|| AmrError::DanglingReference(v.to_string()));
        let root = index
            .get(root)
            .copied()
            .ok_or_else(|| AmrError::InvalidGraph(format!("root {root:?} is not a variable")))?;
        let mut g = Self { root, variables, concepts, relations: Vec::new(), attributes: Vec::new() };
        for &(s, r, t) in relations {
            g.push_relation(lookup(s)?, r, lookup(t)?);
        }
        for &(s, r, v) in attributes {
            g.push_attribute(lookup(s)?, r, v);
        }
        g.check_connected()?;
        Ok(g)
    }

    fn push_relation(&mut self, s: usize, role: &str, t: usize) {
        if !self.relations.iter().any(|(a, r, b)| *a == s && r == role && *b == t) {
            self.relations.push((s, role.to_string(), t));
        }
    }

    fn push_attribute(&mut self, s: usize, role: &str, value: &str) {
        if !self.attributes.iter().any(|(a, r, v)| *a == s && r == role && v == value) {
            self.attributes.push((s, role.to_string(), value.to_string()));
        }
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.variables.len();
        let mut adj = vec![Vec::new(); n];
        for &(s, _, t) in &self.relations {
            adj[s].push(t);
            adj[t].push(s);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.root];
        seen[self.root] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(v) => Err(AmrError::InvalidGraph(format!(
                "variable {:?} is not connected to the root",
                self.variables[v]
            ))),
            None => Ok(()),
        }
    }

    pub fn root(&self) -> &str {
        &self.variables[self.root]
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn instance_triples(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.variables.iter().zip(&self.concepts).map(|(v, c)| (v.as_str(), INSTANCE, c.as_str()))
    }

    pub fn relation_triples(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.relations
            .iter()
            .map(|(s, r, t)| (self.variables[*s].as_str(), r.as_str(), self.variables[*t].as_str()))
    }

    pub fn attribute_triples(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.attributes.iter().map(|(s, r, v)| (self.variables[*s].as_str(), r.as_str(), v.as_str()))
    }

    pub fn triple_count(&self) -> usize {
        self.variables.len() + self.relations.len() + self.attributes.len()
    }

    /// All triples as owned strings, for order-insensitive comparison.
    pub fn triple_set(&self) -> BTreeSet<(String, String, String)> {
        self.instance_triples()
            .chain(self.relation_triples())
            .chain(self.attribute_triples())
            .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string()))
            .collect()
    }

    pub(crate) fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub(crate) fn relations_raw(&self) -> &[(usize, String, usize)] {
        &self.relations
    }

    pub(crate) fn attributes_raw(&self) -> &[(usize, String, String)] {
        &self.attributes
    }

    /// Single-line PENMAN serialization. Nodes are nested along a spanning
    /// tree that prefers forward edges; a node reached only through an
    /// incoming edge is written under an inverse `-of` role. Remaining edges
    /// become bare references at their source.
    pub fn to_penman(&self) -> String {
        let n = self.variables.len();
        // Tree edge index per node, with the side it was entered from.
        let mut entered: Vec<Option<(usize, bool)>> = vec![None; n];
        let mut reached = vec![false; n];
        reached[self.root] = true;
        let mut frontier = vec![self.root];
        loop {
            while let Some(v) = frontier.pop() {
                for (idx, &(s, _, t)) in self.relations.iter().enumerate().rev() {
                    if s == v && !reached[t] {
                        reached[t] = true;
                        entered[t] = Some((idx, false));
                        frontier.push(t);
                    }
                }
            }
            let bridge = self.relations.iter().enumerate().find_map(|(idx, &(s, _, t))| {
                (reached[t] && !reached[s]).then_some((idx, s))
            });
            match bridge {
                Some((idx, s)) => {
                    reached[s] = true;
                    entered[s] = Some((idx, true));
                    frontier.push(s);
                }
                None => break,
            }
        }
        let mut out = String::new();
        self.write_node(self.root, &entered, &mut out);
        out
    }

    fn write_node(&self, v: usize, entered: &[Option<(usize, bool)>], out: &mut String) {
        let _ = write!(out, "({} / {}", self.variables[v], self.concepts[v]);
        for (s, role, value) in &self.attributes {
            if *s == v {
                let _ = write!(out, " :{role} {value}");
            }
        }
        for (idx, (s, role, t)) in self.relations.iter().enumerate() {
            if *s == v && entered[*t] == Some((idx, false)) {
                let _ = write!(out, " :{role} ");
                self.write_node(*t, entered, out);
            } else if *t == v && entered[*s] == Some((idx, true)) {
                let _ = write!(out, " :{role}-of ");
                self.write_node(*s, entered, out);
            } else if *s == v && entered[*t] != Some((idx, false)) && entered[v] != Some((idx, true)) {
                let _ = write!(out, " :{role} {}", self.variables[*t]);
            }
        }
        out.push(')');
    }
}

impl std::str::FromStr for AmrGraph {
    type Err = AmrError;

    fn from_str(s: &str) -> Result<Self> {
        parse_graph(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok<'a> {
    LParen,
    RParen,
    Slash,
    Role(&'a str),
    Str(&'a str),
    Sym(&'a str),
    Eof,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    peeked: Option<(usize, Tok<'a>)>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0, peeked: None }
    }

    fn err<T>(&self, position: usize, message: impl Into<String>) -> Result<T> {
        Err(AmrError::Syntax { position, message: message.into() })
    }

    fn skip_trivia(&mut self) {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() {
            match bytes[self.pos] {
                b if b.is_ascii_whitespace() => self.pos += 1,
                b'#' => {
                    while self.pos < bytes.len() && bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn symbol_end(&self, from: usize) -> usize {
        self.src[from..]
            .find(|c: char| c.is_whitespace() || matches!(c, '(' | ')' | '/' | '"'))
            .map_or(self.src.len(), |i| from + i)
    }

    fn lex(&mut self) -> Result<(usize, Tok<'a>)> {
        self.skip_trivia();
        let start = self.pos;
        let Some(c) = self.src[start..].chars().next() else {
            return Ok((start, Tok::Eof));
        };
        let tok = match c {
            '(' => {
                self.pos += 1;
                Tok::LParen
            }
            ')' => {
                self.pos += 1;
                Tok::RParen
            }
            '/' => {
                self.pos += 1;
                Tok::Slash
            }
            ':' => {
                let end = self.symbol_end(start + 1);
                if end == start + 1 {
                    return self.err(start, "empty role name");
                }
                self.pos = end;
                Tok::Role(&self.src[start + 1..end])
            }
            '"' => {
                let bytes = self.src.as_bytes();
                let mut i = start + 1;
                loop {
                    match bytes.get(i) {
                        None => return self.err(start, "unterminated string"),
                        Some(b'\\') => i += 2,
                        Some(b'"') => break,
                        Some(_) => i += 1,
                    }
                }
                self.pos = i + 1;
                Tok::Str(&self.src[start..=i])
            }
            _ => {
                let end = self.symbol_end(start);
                self.pos = end;
                Tok::Sym(&self.src[start..end])
            }
        };
        Ok((start, tok))
    }

    fn peek(&mut self) -> Result<(usize, Tok<'a>)> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lex()?);
        }
        Ok(self.peeked.unwrap())
    }

    fn next(&mut self) -> Result<(usize, Tok<'a>)> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lex(),
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    instances: Vec<(&'a str, &'a str)>,
    defined: HashMap<&'a str, usize>,
    relations: Vec<(&'a str, String, &'a str)>,
    attributes: Vec<(&'a str, &'a str, &'a str)>,
    /// Bare symbol values, resolved once every variable is known.
    pending: Vec<(&'a str, &'a str, &'a str)>,
}

impl<'a> Parser<'a> {
    fn node(&mut self) -> Result<&'a str> {
        match self.lexer.next()? {
            (_, Tok::LParen) => {}
            (p, t) => return self.lexer.err(p, format!("expected '(', found {t:?}")),
        }
        let var = match self.lexer.next()? {
            (_, Tok::Sym(v)) => v,
            (p, t) => return self.lexer.err(p, format!("expected variable, found {t:?}")),
        };
        if self.defined.insert(var, self.instances.len()).is_some() {
            return Err(AmrError::DuplicateVariable(var.to_string()));
        }
        match self.lexer.next()? {
            (_, Tok::Slash) => {}
            (p, t) => return self.lexer.err(p, format!("expected '/' after variable {var:?}, found {t:?}")),
        }
        let concept = match self.lexer.next()? {
            (_, Tok::Sym(c)) | (_, Tok::Str(c)) => c,
            (p, t) => return self.lexer.err(p, format!("expected concept, found {t:?}")),
        };
        self.instances.push((var, concept));
        loop {
            match self.lexer.next()? {
                (_, Tok::RParen) => return Ok(var),
                (_, Tok::Role(role)) => match self.lexer.peek()? {
                    (_, Tok::LParen) => {
                        let child = self.node()?;
                        match inverse_base(role) {
                            Some(base) => self.relations.push((child, base.to_string(), var)),
                            None => self.relations.push((var, role.to_string(), child)),
                        }
                    }
                    (_, Tok::Str(s)) => {
                        self.lexer.next()?;
                        self.attributes.push((var, role, s));
                    }
                    (_, Tok::Sym(s)) => {
                        self.lexer.next()?;
                        self.pending.push((var, role, s));
                    }
                    (p, t) => return self.lexer.err(p, format!("expected value for :{role}, found {t:?}")),
                },
                (p, t) => return self.lexer.err(p, format!("expected role or ')', found {t:?}")),
            }
        }
    }
}

/// Parses one graph in PENMAN notation: `(var / concept :role value ...)`.
/// Values are nested nodes, quoted strings, variable references, or bare
/// constants. Inverse roles are normalized to their base direction.
pub fn parse_graph(serialized: &str) -> Result<AmrGraph> {
    let mut p = Parser {
        lexer: Lexer::new(serialized),
        instances: Vec::new(),
        defined: HashMap::new(),
        relations: Vec::new(),
        attributes: Vec::new(),
        pending: Vec::new(),
    };
    let root = p.node()?;
    match p.lexer.next()? {
        (_, Tok::Eof) => {}
        (pos, t) => return p.lexer.err(pos, format!("trailing input {t:?}")),
    }
    for &(var, role, sym) in &p.pending {
        if p.defined.contains_key(sym) {
            match inverse_base(role) {
                Some(base) => p.relations.push((sym, base.to_string(), var)),
                None => p.relations.push((var, role.to_string(), sym)),
            }
        } else if looks_like_variable(sym) {
            return Err(AmrError::DanglingReference(sym.to_string()));
        } else {
            p.attributes.push((var, role, sym));
        }
    }
    let relations: Vec<(&str, &str, &str)> = p.relations.iter().map(|(s, r, t)| (*s, r.as_str(), *t)).collect();
    AmrGraph::new(root, &p.instances, &relations, &p.attributes)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    const WANT: &str = "(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))";

    #[test]
    fn canonical_example_counts() {
        let g = parse_graph(WANT).unwrap();
        assert_eq!(g.variables().len(), 3);
        assert_eq!(g.instance_triples().count(), 3);
        assert_eq!(g.relation_triples().count(), 3);
        assert_eq!(g.attribute_triples().count(), 0);
        assert_eq!(g.root(), "w");
        assert!(g.relation_triples().any(|t| t == ("g", "ARG0", "b")));
    }

    #[test]
    fn minimal_graph() {
        let g = parse_graph("(a / alpha)").unwrap();
        assert_eq!((g.variables().len(), g.relation_triples().count()), (1, 0));
    }

    #[test]
    fn duplicate_variable_rejected() {
        assert!(matches!(
            parse_graph("(a / alpha :mod (a / beta))"),
            Err(AmrError::DuplicateVariable(v)) if v == "a"
        ));
    }

    #[test]
    fn dangling_reference_rejected() {
        assert!(matches!(parse_graph("(a / alpha :ARG0 b2)"), Err(AmrError::DanglingReference(v)) if v == "b2"));
    }

    #[test]
    fn syntax_errors_carry_position() {
        for (src, pos) in [("(a / alpha", 10), ("(a alpha)", 3), ("(a / alpha) x", 12), ("(a / b :ARG0 \"x)", 13)] {
            match parse_graph(src) {
                Err(AmrError::Syntax { position, .. }) => assert_eq!(position, pos, "{src}"),
                other => panic!("{src}: {other:?}"),
            }
        }
    }

    #[test]
    fn inverse_roles_and_constants() {
        let g = parse_graph(
            "# ::snt The boy who left did not sing.\n\
             (s / sing-01 :polarity - :ARG0 (b / boy :ARG0-of (l / leave-11)) :name \"Kim Lee\" :consist-of (t / thing))",
        )
        .unwrap();
        let rel: Vec<_> = g.relation_triples().collect();
        assert!(rel.contains(&("l", "ARG0", "b")));
        assert!(rel.contains(&("s", "consist-of", "t")));
        let attrs: Vec<_> = g.attribute_triples().collect();
        assert!(attrs.contains(&("s", "polarity", "-")));
        assert!(attrs.contains(&("s", "name", "\"Kim Lee\"")));
    }

    #[test]
    fn reentrancy_before_definition_resolves() {
        let g = parse_graph("(a / and :op1 (b / buy :ARG0 c) :op2 (c / person))").unwrap();
        assert!(g.relation_triples().any(|t| t == ("b", "ARG0", "c")));
    }

    #[test]
    fn serializer_round_trip_examples() {
        for src in [WANT, "(a / alpha)", "(s / sing-01 :ARG0 (b / boy :ARG0-of (l / leave-11)) :mod \"x y\")"] {
            let g = parse_graph(src).unwrap();
            let again = parse_graph(&g.to_penman()).unwrap();
            assert_eq!(g.triple_set(), again.triple_set());
            assert_eq!(g.root(), again.root());
        }
        assert_eq!(parse_graph(WANT).unwrap().to_penman(), WANT);
    }

    #[test]
    fn disconnected_graph_rejected() {
        assert!(matches!(
            AmrGraph::new("a", &[("a", "x"), ("b", "y")], &[], &[]),
            Err(AmrError::InvalidGraph(_))
        ));
    }

    pub(crate) fn random_graph(rng: &mut ChaCha8Rng, max_vars: usize) -> AmrGraph {
        const CONCEPTS: [&str; 4] = ["alpha", "beta", "gamma", "delta"];
        const ROLES: [&str; 3] = ["ARG0", "ARG1", "mod"];
        let n = rng.gen_range(1..=max_vars);
        let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let instances: Vec<(&str, &str)> =
            names.iter().map(|v| (v.as_str(), CONCEPTS[rng.gen_range(0..CONCEPTS.len())])).collect();
        let mut relations = Vec::new();
        for i in 1..n {
            let parent = rng.gen_range(0..i);
            let (s, t) = if rng.gen_bool(0.8) { (parent, i) } else { (i, parent) };
            relations.push((names[s].as_str(), ROLES[rng.gen_range(0..3)], names[t].as_str()));
        }
        for _ in 0..rng.gen_range(0..=n / 2) {
            let (s, t) = (rng.gen_range(0..n), rng.gen_range(0..n));
            relations.push((names[s].as_str(), ROLES[rng.gen_range(0..3)], names[t].as_str()));
        }
        let mut attributes = Vec::new();
        for v in &names {
            if rng.gen_bool(0.3) {
                attributes.push((v.as_str(), "polarity", if rng.gen_bool(0.5) { "-" } else { "+" }));
            }
        }
        AmrGraph::new(&names[0], &instances, &relations, &attributes).unwrap()
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(seed in any::<u64>(), max_vars in 1usize..10) {
            use rand::SeedableRng;
            let g = random_graph(&mut ChaCha8Rng::seed_from_u64(seed), max_vars);
            let text = g.to_penman();
            let again = parse_graph(&text).unwrap();
            prop_assert_eq!(g.triple_set(), again.triple_set());
            prop_assert_eq!(g.root(), again.root());
        }

        #[test]
        fn parser_never_panics(s in "[()/: a-z0-9\"-]{0,40}") {
            let _ = parse_graph(&s);
        }
    }
}
