//! Minimal SAIF 2.0 subset. See `docs/saif.md` for the accepted grammar.

use std::fmt::Write as _;
use std::io::{self, Write};

use thiserror::Error;

use crate::netgraph::CircuitGraph;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct SaifError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaifNet {
    pub name: String,
    pub t0: u64,
    pub t1: u64,
    pub tc: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaifDocument {
    pub design: String,
    pub instance: String,
    pub duration: u64,
    pub nets: Vec<SaifNet>,
}

impl SaifDocument {
    /// Per-net counts from probabilities: `T1 = round(p1 * D)`,
    /// `T0 = D - T1`, `TC = round(ptr * D)`. Unnamed nodes get `n<id>` and
    /// are counted in the second return value.
    pub fn from_activity(g: &CircuitGraph, p1: &[f64], ptr: &[f64], duration: u64, design: &str) -> (Self, usize) {
        let d = duration as f64;
        let count = |x: f64| ((x * d).round().max(0.0) as u64).min(duration);
        let mut synthesized = 0;
        let nets = (0..g.len())
            .map(|v| {
                let name = match g.names().name(v) {
                    Some(s) => s.to_owned(),
                    None => {
                        synthesized += 1;
                        format!("n{v}")
                    }
                };
                let t1 = count(p1[v]);
                SaifNet {
                    name,
                    t0: duration - t1,
                    t1,
                    tc: count(ptr[v]),
                }
            })
            .collect();
        if synthesized > 0 {
            log::warn!("{synthesized} unnamed nets written with synthesized names");
        }
        let doc = SaifDocument {
            design: design.to_owned(),
            instance: design.to_owned(),
            duration,
            nets,
        };
        (doc, synthesized)
    }

    pub fn net(&self, name: &str) -> Option<&SaifNet> {
        self.nets.iter().find(|n| n.name == name)
    }

    /// `(T1 / D, TC / D)` of a net.
    pub fn activity(&self, name: &str) -> Option<(f64, f64)> {
        let d = self.duration as f64;
        self.net(name).map(|n| (n.t1 as f64 / d, n.tc as f64 / d))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("(SAIFILE\n");
        s.push_str("  (SAIFVERSION \"2.0\")\n");
        s.push_str("  (DIRECTION \"backward\")\n");
        let _ = writeln!(s, "  (DESIGN \"{}\")", self.design.replace('"', "'"));
        s.push_str("  (PROGRAM_NAME \"seqlearn\")\n");
        s.push_str("  (DIVIDER / )\n");
        s.push_str("  (TIMESCALE 1 ns)\n");
        let _ = writeln!(s, "  (DURATION {})", self.duration);
        let _ = writeln!(s, "  (INSTANCE {}", escape(&self.instance));
        s.push_str("    (NET\n");
        for n in &self.nets {
            let _ = writeln!(
                s,
                "      ({}\n        (T0 {}) (T1 {}) (TC {})\n      )",
                escape(&n.name),
                n.t0,
                n.t1,
                n.tc
            );
        }
        s.push_str("    )\n  )\n)\n");
        s
    }
}

pub fn write_saif<W: Write>(doc: &SaifDocument, mut out: W) -> io::Result<()> {
    out.write_all(doc.to_text().as_bytes())?;
    out.flush()
}

fn escape(name: &str) -> String {
    let mut s = String::with_capacity(name.len());
    for c in name.chars() {
        if !(c.is_ascii_alphanumeric() || c == '_') {
            s.push('\\');
        }
        s.push(c);
    }
    if s.is_empty() {
        s.push_str("\\ ");
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Atom(String),
    Str(String),
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, SaifError> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut it = text.chars().peekable();
    while let Some(c) = it.next() {
        match c {
            '\n' => line += 1,
            c if c.is_whitespace() => {}
            '(' => out.push((Tok::Open, line)),
            ')' => out.push((Tok::Close, line)),
            '"' => {
                let start = line;
                let mut s = String::new();
                loop {
                    match it.next() {
                        Some('"') => break,
                        Some('\n') => {
                            line += 1;
                            s.push('\n');
                        }
                        Some(c) => s.push(c),
                        None => {
                            return Err(SaifError {
                                line: start,
                                msg: "unterminated string".into(),
                            })
                        }
                    }
                }
                out.push((Tok::Str(s), start));
            }
            '/' if it.peek() == Some(&'/') => {
                for c in it.by_ref() {
                    if c == '\n' {
                        line += 1;
                        break;
                    }
                }
            }
            _ => {
                let mut s = String::new();
                let mut c = c;
                loop {
                    if c == '\\' {
                        match it.next() {
                            Some(e) => s.push(e),
                            None => {
                                return Err(SaifError {
                                    line,
                                    msg: "dangling escape".into(),
                                })
                            }
                        }
                    } else {
                        s.push(c);
                    }
                    match it.peek() {
                        Some(&n) if !n.is_whitespace() && n != '(' && n != ')' && n != '"' => {
                            c = n;
                            it.next();
                        }
                        _ => break,
                    }
                }
                out.push((Tok::Atom(s), line));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Sexp {
    List(Vec<Sexp>, usize),
    Atom(String, usize),
    Str(String, usize),
}

impl Sexp {
    fn line(&self) -> usize {
        match self {
            Sexp::List(_, l) | Sexp::Atom(_, l) | Sexp::Str(_, l) => *l,
        }
    }

    fn head(&self) -> Option<&str> {
        match self {
            Sexp::List(items, _) => match items.first() {
                Some(Sexp::Atom(s, _)) => Some(s),
                _ => None,
            },
            _ => None,
        }
    }

    fn items(&self) -> &[Sexp] {
        match self {
            Sexp::List(items, _) => items,
            _ => &[],
        }
    }

    fn text(&self) -> Option<&str> {
        match self {
            Sexp::Atom(s, _) | Sexp::Str(s, _) => Some(s),
            Sexp::List(..) => None,
        }
    }
}

fn parse_sexp(toks: &[(Tok, usize)], pos: &mut usize) -> Result<Sexp, SaifError> {
    let (tok, line) = toks.get(*pos).cloned().ok_or(SaifError {
        line: toks.last().map_or(1, |t| t.1),
        msg: "unexpected end of file".into(),
    })?;
    *pos += 1;
    match tok {
        Tok::Open => {
            let mut items = Vec::new();
            loop {
                match toks.get(*pos) {
                    Some((Tok::Close, _)) => {
                        *pos += 1;
                        return Ok(Sexp::List(items, line));
                    }
                    Some(_) => items.push(parse_sexp(toks, pos)?),
                    None => {
                        return Err(SaifError {
                            line,
                            msg: "unbalanced '('".into(),
                        })
                    }
                }
            }
        }
        Tok::Close => Err(SaifError {
            line,
            msg: "unexpected ')'".into(),
        }),
        Tok::Atom(s) => Ok(Sexp::Atom(s, line)),
        Tok::Str(s) => Ok(Sexp::Str(s, line)),
    }
}

fn err(line: usize, msg: impl Into<String>) -> SaifError {
    SaifError { line, msg: msg.into() }
}

fn int(s: &Sexp) -> Result<u64, SaifError> {
    s.text()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| err(s.line(), "expected a non-negative integer"))
}

fn read_instance(inst: &Sexp, prefix: &str, nets: &mut Vec<SaifNet>) -> Result<String, SaifError> {
    let items = inst.items();
    let name = items
        .get(1)
        .and_then(Sexp::text)
        .ok_or_else(|| err(inst.line(), "INSTANCE needs a name"))?
        .to_owned();
    for item in &items[2..] {
        match item.head() {
            Some("NET") => {
                for net in &item.items()[1..] {
                    let parts = net.items();
                    let n = parts
                        .first()
                        .and_then(Sexp::text)
                        .ok_or_else(|| err(net.line(), "net entry needs a name"))?;
                    let mut counts = [None; 3];
                    for p in &parts[1..] {
                        let slot = match p.head() {
                            Some("T0") => 0,
                            Some("T1") => 1,
                            Some("TC") => 2,
                            _ => continue,
                        };
                        let v = p.items().get(1).ok_or_else(|| err(p.line(), "missing count"))?;
                        counts[slot] = Some(int(v)?);
                    }
                    let [Some(t0), Some(t1), Some(tc)] = counts else {
                        return Err(err(net.line(), format!("net {n} lacks T0, T1 or TC")));
                    };
                    nets.push(SaifNet {
                        name: format!("{prefix}{n}"),
                        t0,
                        t1,
                        tc,
                    });
                }
            }
            Some("INSTANCE") => {
                let sub = item.items().get(1).and_then(Sexp::text).unwrap_or_default().to_owned();
                read_instance(item, &format!("{prefix}{sub}/"), nets)?;
            }
            _ => {}
        }
    }
    Ok(name)
}

pub fn parse_saif(text: &str) -> Result<SaifDocument, SaifError> {
    let toks = tokenize(text)?;
    let mut pos = 0;
    let root = parse_sexp(&toks, &mut pos)?;
    if let Some((_, line)) = toks.get(pos) {
        return Err(err(*line, "trailing content after SAIFILE"));
    }
    if root.head() != Some("SAIFILE") {
        return Err(err(root.line(), "expected (SAIFILE ...)"));
    }
    let mut design = String::new();
    let mut duration = None;
    let mut instance = None;
    let mut nets = Vec::new();
    for item in &root.items()[1..] {
        match item.head() {
            Some("DESIGN") => design = item.items().get(1).and_then(Sexp::text).unwrap_or_default().to_owned(),
            Some("DURATION") => {
                let v = item.items().get(1).ok_or_else(|| err(item.line(), "missing duration"))?;
                duration = Some(int(v)?);
            }
            Some("INSTANCE") => {
                if instance.is_some() {
                    return Err(err(item.line(), "more than one top-level INSTANCE"));
                }
                instance = Some(read_instance(item, "", &mut nets)?);
            }
            _ => {}
        }
    }
    let duration = duration.ok_or_else(|| err(root.line(), "missing DURATION"))?;
    for n in &nets {
        if n.t0 + n.t1 != duration {
            return Err(err(root.line(), format!("net {}: T0 + T1 != DURATION", n.name)));
        }
    }
    Ok(SaifDocument {
        design,
        instance: instance.ok_or_else(|| err(root.line(), "missing INSTANCE"))?,
        duration,
        nets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::CircuitBuilder;

    fn graph() -> CircuitGraph {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.constant();
        let x = b.add_and(a, c);
        b.set_name(a, "in[0]");
        b.set_name(c, "tie");
        let _ = x;
        b.build()
    }

    #[test]
    fn counts_and_roundtrip() {
        let g = graph();
        let (doc, synth) = SaifDocument::from_activity(&g, &[0.5, 1.0, 0.123], &[0.5, 0.0, 0.0456], 100, "top");
        assert_eq!(synth, 1);
        assert_eq!(doc.net("in[0]").unwrap(), &SaifNet { name: "in[0]".into(), t0: 50, t1: 50, tc: 50 });
        assert_eq!(doc.net("tie").unwrap().t1, 100);
        assert_eq!(doc.net("tie").unwrap().tc, 0);
        let text = doc.to_text();
        assert!(text.contains("in\\[0\\]"));
        let back = parse_saif(&text).unwrap();
        assert_eq!(back, doc);
        let (p1, ptr) = back.activity("n2").unwrap();
        assert!((p1 - 0.123).abs() <= 0.5 / 100.0);
        assert!((ptr - 0.0456).abs() <= 0.5 / 100.0);
    }

    #[test]
    fn reader_errors_carry_lines() {
        let bad = "(SAIFILE\n (DURATION 10)\n (INSTANCE top (NET (a (T0 3) (T1 3) (TC 1))))\n)";
        assert_eq!(parse_saif(bad).unwrap_err().line, 1);
        let e = parse_saif("(SAIFILE\n (DURATION x)\n)").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(parse_saif("(SAIFILE (DURATION 1)").is_err());
    }

    #[test]
    fn nested_instances_are_flattened() {
        let text = "(SAIFILE (DURATION 4) (INSTANCE top (NET (a (T0 1) (T1 3) (TC 2))) \
                    (INSTANCE u1 (NET (b (T0 4) (T1 0) (TC 0) (IG 0))))))";
        let d = parse_saif(text).unwrap();
        assert_eq!(d.nets.len(), 2);
        assert_eq!(d.nets[1].name, "u1/b");
    }
}
