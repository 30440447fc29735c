//! Line-oriented text format for fault maintenance trees (`.fmt`).
//!
//! ```text
//! // HVAC supply fan
//! toplevel fan;
//! policy trep=6m toh=20y tinsp=7d stages=3;
//! costs repair=100 replace=5000;
//! fan or motor bearing;
//! acc rdep gamma=2.0 bearing -> motor;
//! motor ebe levels=3 tdeg=35y tclean=1d treplace=7d;
//! bearing ebe levels=6 tdeg=17y tclean=1d treplace=7d;
//! ```
//!
//! Durations take a `d`, `m` (30.42 d) or `y` (365 d) suffix; bare numbers
//! are days and `inf` disables a timer. The grammar is in `docs/grammar.md`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::model::{
    CostModel, EbeSpec, FmtModel, GateKind, GateSpec, MaintenancePolicy, Node, NodeId,
    DAYS_PER_MONTH, DAYS_PER_YEAR,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("expected {expected}, found `{found}`")]
    Unexpected { expected: String, found: String },
    #[error("unexpected character `{0}`")]
    BadChar(char),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown reference `{0}`")]
    UnknownReference(String),
    #[error("bad unit suffix in `{0}` (expected d, m or y)")]
    BadUnit(String),
    #[error("invalid number `{0}`")]
    BadNumber(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("missing attribute `{0}`")]
    MissingAttribute(String),
    #[error("duplicate `{0}` statement")]
    DuplicateStatement(String),
    #[error("no `toplevel` statement")]
    MissingTopLevel,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Eq,
    Semi,
    Arrow,
    Comma,
    Eof,
}

impl Tok {
    fn text(&self) -> String {
        match self {
            Tok::Word(w) => w.clone(),
            Tok::Eq => "=".into(),
            Tok::Semi => ";".into(),
            Tok::Arrow => "->".into(),
            Tok::Comma => ",".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    for (lineno, line) in src.lines().enumerate() {
        let line_no = lineno + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c == '/' && chars.get(i + 1) == Some(&'/') {
                break;
            }
            let simple = match c {
                '=' => Some(Tok::Eq),
                ';' => Some(Tok::Semi),
                ',' => Some(Tok::Comma),
                '-' if chars.get(i + 1) == Some(&'>') => {
                    i += 1;
                    Some(Tok::Arrow)
                }
                _ => None,
            };
            if let Some(tok) = simple {
                out.push(Spanned {
                    tok,
                    line: line_no,
                    column,
                });
                i += 1;
                continue;
            }
            if is_word_char(c) || c == '-' || c == '+' {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let ch = chars[i];
                    let exponent_sign = (ch == '-' || ch == '+')
                        && matches!(chars[i - 1], 'e' | 'E')
                        && chars[start].is_ascii_digit();
                    if is_word_char(ch) || exponent_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push(Spanned {
                    tok: Tok::Word(chars[start..i].iter().collect()),
                    line: line_no,
                    column,
                });
                continue;
            }
            return Err(ParseError {
                line: line_no,
                column,
                kind: ParseErrorKind::BadChar(c),
            });
        }
    }
    let last_line = src.lines().count().max(1);
    out.push(Spanned {
        tok: Tok::Eof,
        line: last_line,
        column: src.lines().last().map_or(1, |l| l.chars().count() + 1),
    });
    Ok(out)
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses a duration such as `20y`, `6m`, `7d`, `7` or `inf` into days.
pub fn parse_duration(text: &str) -> Result<f64, ParseErrorKind> {
    if text == "inf" {
        return Ok(f64::INFINITY);
    }
    let split = text
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(text.len());
    let (num, unit) = text.split_at(split);
    let factor = match unit {
        "" | "d" => 1.0,
        "m" => DAYS_PER_MONTH,
        "y" => DAYS_PER_YEAR,
        _ => return Err(ParseErrorKind::BadUnit(text.to_string())),
    };
    let value: f64 = num
        .parse()
        .map_err(|_| ParseErrorKind::BadNumber(text.to_string()))?;
    if !value.is_finite() {
        return Err(ParseErrorKind::BadNumber(text.to_string()));
    }
    Ok(value * factor)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

struct Attr {
    key: String,
    value: String,
    line: usize,
    column: usize,
}

struct Reference {
    id: String,
    line: usize,
    column: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(at: &Spanned, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: at.line,
            column: at.column,
            kind,
        }
    }

    fn unexpected(at: &Spanned, expected: &str) -> ParseError {
        Self::error(
            at,
            ParseErrorKind::Unexpected {
                expected: expected.to_string(),
                found: at.tok.text(),
            },
        )
    }

    fn ident(&mut self) -> Result<Reference, ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Word(w) if is_identifier(w) => Ok(Reference {
                id: w.clone(),
                line: t.line,
                column: t.column,
            }),
            _ => Err(Self::unexpected(&t, "identifier")),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        let t = self.next();
        if t.tok == tok {
            Ok(())
        } else {
            Err(Self::unexpected(&t, what))
        }
    }

    fn attrs(&mut self) -> Result<Vec<Attr>, ParseError> {
        let mut out = Vec::new();
        while self.peek().tok != Tok::Semi {
            let key = self.ident()?;
            self.expect(Tok::Eq, "`=`")?;
            let v = self.next();
            let Tok::Word(value) = v.tok.clone() else {
                return Err(Self::unexpected(&v, "attribute value"));
            };
            out.push(Attr {
                key: key.id,
                value,
                line: v.line,
                column: v.column,
            });
        }
        Ok(out)
    }
}

struct AttrSet {
    attrs: Vec<Attr>,
    used: Vec<bool>,
}

impl AttrSet {
    fn new(attrs: Vec<Attr>) -> Self {
        let used = vec![false; attrs.len()];
        Self { attrs, used }
    }

    fn take(&mut self, key: &str) -> Option<&Attr> {
        let i = self.attrs.iter().position(|a| a.key == key)?;
        self.used[i] = true;
        Some(&self.attrs[i])
    }

    fn duration(&mut self, key: &str) -> Result<Option<f64>, ParseError> {
        match self.take(key) {
            None => Ok(None),
            Some(a) => parse_duration(&a.value).map(Some).map_err(|kind| ParseError {
                line: a.line,
                column: a.column,
                kind,
            }),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ParseError> {
        match self.take(key) {
            None => Ok(None),
            Some(a) => a.value.parse().map(Some).map_err(|_| ParseError {
                line: a.line,
                column: a.column,
                kind: ParseErrorKind::BadNumber(a.value.clone()),
            }),
        }
    }

    fn required<T>(v: Option<T>, key: &str, at: &Spanned) -> Result<T, ParseError> {
        v.ok_or_else(|| Parser::error(at, ParseErrorKind::MissingAttribute(key.to_string())))
    }

    fn finish(self) -> Result<(), ParseError> {
        match self.attrs.iter().zip(&self.used).find(|(_, u)| !**u) {
            Some((a, _)) => Err(ParseError {
                line: a.line,
                column: a.column,
                kind: ParseErrorKind::UnknownAttribute(a.key.clone()),
            }),
            None => Ok(()),
        }
    }
}

/// Parses a `.fmt` document. Structural well-formedness (single root,
/// RDEP trigger kinds, acyclicity) is left to [`crate::model::validate`];
/// this only rejects text that does not describe a model at all.
pub fn parse(source: &str) -> Result<FmtModel, ParseError> {
    let mut p = Parser {
        toks: lex(source)?,
        pos: 0,
    };
    let mut top: Option<String> = None;
    let mut policy: Option<MaintenancePolicy> = None;
    let mut costs: Option<CostModel> = None;
    let mut nodes: BTreeMap<NodeId, Node> = BTreeMap::new();
    let mut lines: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut references: Vec<Reference> = Vec::new();

    while p.peek().tok != Tok::Eof {
        let head_tok = p.peek().clone();
        let head = p.ident()?;
        match head.id.as_str() {
            "toplevel" => {
                if top.is_some() {
                    return Err(Parser::error(&head_tok, ParseErrorKind::DuplicateStatement("toplevel".into())));
                }
                let id = p.ident()?;
                top = Some(id.id.clone());
                references.push(id);
            }
            "policy" => {
                if policy.is_some() {
                    return Err(Parser::error(&head_tok, ParseErrorKind::DuplicateStatement("policy".into())));
                }
                let mut a = AttrSet::new(p.attrs()?);
                let defaults = MaintenancePolicy::disabled();
                policy = Some(MaintenancePolicy {
                    t_rep: a.duration("trep")?.unwrap_or(defaults.t_rep),
                    t_oh: a.duration("toh")?.unwrap_or(defaults.t_oh),
                    t_insp: a.duration("tinsp")?.unwrap_or(defaults.t_insp),
                    timer_stages: a.number("stages")?.unwrap_or(defaults.timer_stages),
                });
                a.finish()?;
            }
            "costs" => {
                if costs.is_some() {
                    return Err(Parser::error(&head_tok, ParseErrorKind::DuplicateStatement("costs".into())));
                }
                let mut a = AttrSet::new(p.attrs()?);
                let d = CostModel::default();
                costs = Some(CostModel {
                    cost_repair: a.number("repair")?.unwrap_or(d.cost_repair),
                    cost_replace: a.number("replace")?.unwrap_or(d.cost_replace),
                    cost_operational_per_day: a.number("operational")?.unwrap_or(d.cost_operational_per_day),
                    cost_failure_per_day: a.number("failure")?.unwrap_or(d.cost_failure_per_day),
                });
                a.finish()?;
            }
            _ => {
                if nodes.contains_key(&head.id) {
                    return Err(Parser::error(&head_tok, ParseErrorKind::DuplicateId(head.id)));
                }
                let kind_tok = p.peek().clone();
                let kind = p.ident()?;
                let node = match kind.id.as_str() {
                    "or" => {
                        let mut inputs = vec![p.ident()?];
                        while p.peek().tok != Tok::Semi {
                            inputs.push(p.ident()?);
                        }
                        let gate = GateSpec {
                            id: head.id.clone(),
                            kind: GateKind::Or,
                            inputs: inputs.iter().map(|r| r.id.clone()).collect(),
                        };
                        references.extend(inputs);
                        Node::Gate(gate)
                    }
                    "rdep" => {
                        let gamma_key = p.ident()?;
                        if gamma_key.id != "gamma" {
                            return Err(Parser::error(&p.toks[p.pos - 1], ParseErrorKind::Unexpected {
                                expected: "`gamma`".into(),
                                found: gamma_key.id,
                            }));
                        }
                        p.expect(Tok::Eq, "`=`")?;
                        let v = p.next();
                        let gamma: f64 = match &v.tok {
                            Tok::Word(w) => w.parse().map_err(|_| Parser::error(&v, ParseErrorKind::BadNumber(w.clone())))?,
                            _ => return Err(Parser::unexpected(&v, "number")),
                        };
                        let trigger = p.ident()?;
                        p.expect(Tok::Arrow, "`->`")?;
                        let mut deps = vec![p.ident()?];
                        while p.peek().tok != Tok::Semi {
                            deps.push(p.ident()?);
                        }
                        let gate = GateSpec {
                            id: head.id.clone(),
                            kind: GateKind::Rdep {
                                gamma,
                                dependents: deps.iter().map(|r| r.id.clone()).collect(),
                            },
                            inputs: vec![trigger.id.clone()],
                        };
                        references.push(trigger);
                        references.extend(deps);
                        Node::Gate(gate)
                    }
                    "ebe" => {
                        let mut a = AttrSet::new(p.attrs()?);
                        let levels = AttrSet::required(a.number("levels")?, "levels", &kind_tok)?;
                        let t_deg = AttrSet::required(a.duration("tdeg")?, "tdeg", &kind_tok)?;
                        let t_clean = AttrSet::required(a.duration("tclean")?, "tclean", &kind_tok)?;
                        let t_replace = AttrSet::required(a.duration("treplace")?, "treplace", &kind_tok)?;
                        let maintained = a.number("maintained")?.unwrap_or(true);
                        a.finish()?;
                        Node::Ebe(EbeSpec {
                            id: head.id.clone(),
                            levels,
                            t_deg,
                            t_clean,
                            t_replace,
                            maintained,
                        })
                    }
                    _ => {
                        return Err(Parser::unexpected(&kind_tok, "`or`, `rdep` or `ebe`"));
                    }
                };
                lines.insert(head.id.clone(), head.line);
                nodes.insert(head.id, node);
            }
        }
        p.expect(Tok::Semi, "`;`")?;
    }

    let top = top.ok_or_else(|| Parser::error(p.peek(), ParseErrorKind::MissingTopLevel))?;
    if let Some(r) = references.iter().find(|r| !nodes.contains_key(&r.id)) {
        return Err(ParseError {
            line: r.line,
            column: r.column,
            kind: ParseErrorKind::UnknownReference(r.id.clone()),
        });
    }
    Ok(FmtModel {
        nodes,
        top_event: top,
        policy: policy.unwrap_or_default(),
        costs: costs.unwrap_or_default(),
        source_lines: lines,
    })
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn days(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:?}d")
    }
}

/// Renders a model back to text. Policy and cost statements are omitted
/// when they equal the defaults.
pub fn serialize(model: &FmtModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "toplevel {};", model.top_event);
    if model.policy != MaintenancePolicy::default() {
        let p = &model.policy;
        let _ = writeln!(
            out,
            "policy trep={} toh={} tinsp={} stages={};",
            days(p.t_rep),
            days(p.t_oh),
            days(p.t_insp),
            p.timer_stages
        );
    }
    if model.costs != CostModel::default() {
        let c = &model.costs;
        let _ = writeln!(
            out,
            "costs repair={} replace={} operational={} failure={};",
            num(c.cost_repair),
            num(c.cost_replace),
            num(c.cost_operational_per_day),
            num(c.cost_failure_per_day)
        );
    }
    // gates before events, each group in id order
    for g in model.gates() {
        match &g.kind {
            GateKind::Or => {
                let _ = writeln!(out, "{} or {};", g.id, g.inputs.join(" "));
            }
            GateKind::Rdep { gamma, dependents } => {
                let _ = writeln!(
                    out,
                    "{} rdep gamma={} {} -> {};",
                    g.id,
                    num(*gamma),
                    g.inputs.join(" "),
                    dependents.join(" ")
                );
            }
        }
    }
    for e in model.ebes() {
        let _ = write!(
            out,
            "{} ebe levels={} tdeg={} tclean={} treplace={}",
            e.id,
            e.levels,
            days(e.t_deg),
            days(e.t_clean),
            days(e.t_replace)
        );
        if !e.maintained {
            out.push_str(" maintained=false");
        }
        out.push_str(";\n");
    }
    out
}
