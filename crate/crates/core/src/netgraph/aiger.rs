//! ASCII AIGER (`aag`) reader and writer.
//!
//! Inverted literals become explicit NOT nodes, one per inverted variable.
//! Variable 0 (constant false) maps to a PI flagged as the constant node.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{CircuitBuilder, CircuitGraph, NodeId, NodeKind, ParseError};

#[derive(Debug, Clone, Copy)]
enum VarDef {
    Input,
    Latch,
    And,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str), ParseError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l.trim()))
            }
            None => Err(ParseError::new(
                self.last + 1,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    }
}

fn numbers(line: usize, text: &str, min: usize, max: usize) -> Result<Vec<usize>, ParseError> {
    let vals: Vec<usize> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| ParseError::new(line, format!("invalid number '{t}'")))
        })
        .collect::<Result<_, _>>()?;
    if vals.len() < min || vals.len() > max {
        return Err(ParseError::new(
            line,
            format!("expected {min}..={max} fields, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

/// Parses an ASCII AIGER netlist.
pub fn parse_aiger(text: &str) -> Result<CircuitGraph, ParseError> {
    let mut lines = Lines::new(text);
    let (hl, header) = lines.next_line("header")?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("aag") {
        return Err(ParseError::new(hl, "header must start with 'aag'"));
    }
    let counts = numbers(hl, &header[3..], 5, 9)?;
    if counts[5..].iter().any(|&c| c != 0) {
        return Err(ParseError::new(
            hl,
            "bad-state, constraint, justice and fairness sections are not supported",
        ));
    }
    let (max_var, n_in, n_latch, n_out, n_and) =
        (counts[0], counts[1], counts[2], counts[3], counts[4]);
    if n_in + n_latch + n_and > max_var {
        return Err(ParseError::new(
            hl,
            format!("M={max_var} is smaller than I+L+A={}", n_in + n_latch + n_and),
        ));
    }

    let mut defs: Vec<Option<(VarDef, usize)>> = vec![None; max_var + 1];
    let define = |defs: &mut Vec<Option<(VarDef, usize)>>,
                  line: usize,
                  lit: usize,
                  def: VarDef|
     -> Result<usize, ParseError> {
        if lit & 1 == 1 || lit < 2 {
            return Err(ParseError::new(line, format!("literal {lit} cannot be defined")));
        }
        let var = lit >> 1;
        if var > max_var {
            return Err(ParseError::new(
                line,
                format!("literal {lit} exceeds maximum variable {max_var}"),
            ));
        }
        if defs[var].is_some() {
            return Err(ParseError::new(line, format!("variable {var} defined twice")));
        }
        defs[var] = Some((def, line));
        Ok(var)
    };

    let mut inputs = Vec::with_capacity(n_in);
    for _ in 0..n_in {
        let (l, t) = lines.next_line("input")?;
        let v = numbers(l, t, 1, 1)?;
        inputs.push(define(&mut defs, l, v[0], VarDef::Input)?);
    }
    let mut latches = Vec::with_capacity(n_latch);
    for k in 0..n_latch {
        let (l, t) = lines
            .next_line(&format!("{n_latch} latches, found {k}"))
            .map_err(|e| ParseError::new(e.line, format!("latch count mismatch: {}", e.message)))?;
        let v = numbers(l, t, 2, 3)
            .map_err(|e| ParseError::new(l, format!("latch count mismatch or bad latch: {}", e.message)))?;
        let var = define(&mut defs, l, v[0], VarDef::Latch)?;
        let reset = match v.get(2) {
            None | Some(0) => false,
            Some(1) => true,
            // Uninitialized latches start at zero.
            Some(&x) if x == v[0] => false,
            Some(&x) => {
                return Err(ParseError::new(l, format!("invalid latch reset value {x}")));
            }
        };
        latches.push((var, v[1], reset, l));
    }
    let mut outputs = Vec::with_capacity(n_out);
    for _ in 0..n_out {
        let (l, t) = lines.next_line("output")?;
        let v = numbers(l, t, 1, 1)?;
        outputs.push((v[0], l));
    }
    let mut ands = Vec::with_capacity(n_and);
    for _ in 0..n_and {
        let (l, t) = lines.next_line("and gate")?;
        let v = numbers(l, t, 3, 3)?;
        let var = define(&mut defs, l, v[0], VarDef::And)?;
        ands.push((var, v[1], v[2], l));
    }

    let mut b = CircuitBuilder::new();
    let mut node_of_var: HashMap<usize, NodeId> = HashMap::new();
    for &var in &inputs {
        node_of_var.insert(var, b.add_pi());
    }
    for &(var, _, reset, _) in &latches {
        let ff = b.add_ff(None);
        b.set_reset(ff, reset);
        node_of_var.insert(var, ff);
    }
    for &(var, ..) in &ands {
        node_of_var.insert(var, b.add_node(NodeKind::And, Vec::new()));
    }

    let mut not_of: HashMap<NodeId, NodeId> = HashMap::new();
    let mut resolve = |b: &mut CircuitBuilder, lit: usize, line: usize| -> Result<NodeId, ParseError> {
        let var = lit >> 1;
        if var > max_var {
            return Err(ParseError::new(
                line,
                format!("literal {lit} exceeds maximum variable {max_var}"),
            ));
        }
        let base = if var == 0 {
            b.constant()
        } else {
            *node_of_var
                .get(&var)
                .ok_or_else(|| ParseError::new(line, format!("literal {lit} is undefined")))?
        };
        if lit & 1 == 0 {
            return Ok(base);
        }
        Ok(*not_of.entry(base).or_insert_with(|| b.add_not(base)))
    };

    for &(var, next, _, l) in &latches {
        let d = resolve(&mut b, next, l)?;
        b.set_ff_input(node_of_var[&var], d);
    }
    for &(var, r0, r1, l) in &ands {
        let a = resolve(&mut b, r0, l)?;
        let c = resolve(&mut b, r1, l)?;
        let id = node_of_var[&var];
        b.fanins[id] = vec![a, c];
    }
    let mut out_nodes = Vec::with_capacity(outputs.len());
    for &(lit, l) in &outputs {
        let id = resolve(&mut b, lit, l)?;
        b.add_output(id);
        out_nodes.push(id);
    }

    // Symbol table and comments.
    while let Ok((l, t)) = lines.next_line("symbol") {
        if t.is_empty() {
            continue;
        }
        if t.starts_with('c') {
            break;
        }
        let (tag, rest) = t.split_once(' ').ok_or_else(|| ParseError::new(l, "malformed symbol line"))?;
        let (kind, pos) = tag.split_at(1);
        let pos: usize = pos
            .parse()
            .map_err(|_| ParseError::new(l, format!("malformed symbol '{tag}'")))?;
        let node = match kind {
            "i" => inputs.get(pos).map(|v| node_of_var[v]),
            "l" => latches.get(pos).map(|x| node_of_var[&x.0]),
            "o" => out_nodes.get(pos).copied(),
            _ => return Err(ParseError::new(l, format!("unknown symbol kind '{kind}'"))),
        }
        .ok_or_else(|| ParseError::new(l, format!("symbol index {tag} out of range")))?;
        b.set_name(node, rest.trim());
    }

    Ok(b.build())
}

/// Writes `g` as ASCII AIGER. A NOT over a NOT collapses to the plain literal,
/// so only graphs without double inversion round-trip node for node.
pub fn emit_aiger(g: &CircuitGraph) -> String {
    let mut var_of: Vec<usize> = vec![0; g.len()];
    let mut next = 1;
    let mut inputs = Vec::new();
    let mut latches = Vec::new();
    let mut ands = Vec::new();
    for kind in [NodeKind::Pi, NodeKind::Ff, NodeKind::And] {
        for id in g.nodes_of(kind) {
            if g.is_constant(id) {
                continue;
            }
            var_of[id] = next;
            next += 1;
            match kind {
                NodeKind::Pi => inputs.push(id),
                NodeKind::Ff => latches.push(id),
                _ => ands.push(id),
            }
        }
    }
    let lit = |mut id: NodeId| -> usize {
        let mut inv = 0;
        while g.kind(id) == NodeKind::Not {
            inv ^= 1;
            id = g.fanins(id)[0];
        }
        if g.is_constant(id) {
            inv
        } else {
            2 * var_of[id] + inv
        }
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        "aag {} {} {} {} {}",
        next - 1,
        inputs.len(),
        latches.len(),
        g.outputs().len(),
        ands.len()
    );
    for &i in &inputs {
        let _ = writeln!(s, "{}", 2 * var_of[i]);
    }
    for &f in &latches {
        let d = g.fanins(f).first().map(|&d| lit(d)).unwrap_or(0);
        if g.reset_value(f) {
            let _ = writeln!(s, "{} {} 1", 2 * var_of[f], d);
        } else {
            let _ = writeln!(s, "{} {}", 2 * var_of[f], d);
        }
    }
    for &o in g.outputs() {
        let _ = writeln!(s, "{}", lit(o));
    }
    for &a in &ands {
        let fi = g.fanins(a);
        let _ = writeln!(s, "{} {} {}", 2 * var_of[a], lit(fi[0]), lit(fi[1]));
    }
    let names = g.names();
    for (k, &i) in inputs.iter().enumerate() {
        if let Some(n) = names.name(i) {
            let _ = writeln!(s, "i{k} {n}");
        }
    }
    for (k, &f) in latches.iter().enumerate() {
        if let Some(n) = names.name(f) {
            let _ = writeln!(s, "l{k} {n}");
        }
    }
    for (k, &o) in g.outputs().iter().enumerate() {
        if let Some(n) = names.name(o) {
            let _ = writeln!(s, "o{k} {n}");
        }
    }
    s
}
