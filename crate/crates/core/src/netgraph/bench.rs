//! ISCAS BENCH reader. Gates outside the AND/NOT basis are lowered:
//! `NAND = NOT(AND)`, `OR = NOT(AND(NOT, NOT))`, `NOR = AND(NOT, NOT)`, and
//! n-ary gates become left-leaning AND chains.

use std::collections::HashMap;

use super::{CircuitBuilder, CircuitGraph, NodeId, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Gate {
    And,
    Nand,
    Or,
    Nor,
    Not,
    Dff,
}

impl Gate {
    fn parse(s: &str) -> Option<Gate> {
        Some(match s.to_ascii_uppercase().as_str() {
            "AND" => Gate::And,
            "NAND" => Gate::Nand,
            "OR" => Gate::Or,
            "NOR" => Gate::Nor,
            "NOT" => Gate::Not,
            "DFF" => Gate::Dff,
            _ => return None,
        })
    }
}

struct Def {
    gate: Gate,
    args: Vec<String>,
    line: usize,
}

fn call_args(line: usize, text: &str) -> Result<(&str, Vec<String>), ParseError> {
    let open = text
        .find('(')
        .ok_or_else(|| ParseError::new(line, "expected '('"))?;
    let close = text
        .rfind(')')
        .filter(|&c| c > open)
        .ok_or_else(|| ParseError::new(line, "expected ')'"))?;
    if !text[close + 1..].trim().is_empty() {
        return Err(ParseError::new(line, "trailing characters after ')'"));
    }
    let head = text[..open].trim();
    let args: Vec<String> = text[open + 1..close]
        .split(',')
        .map(|a| a.trim().to_owned())
        .filter(|a| !a.is_empty())
        .collect();
    Ok((head, args))
}

struct Lowering<'a> {
    b: CircuitBuilder,
    defs: &'a HashMap<String, Def>,
    nets: HashMap<String, NodeId>,
    visiting: HashMap<String, usize>,
    not_of: HashMap<NodeId, NodeId>,
}

impl Lowering<'_> {
    fn not(&mut self, x: NodeId, hint: &str) -> NodeId {
        if let Some(&n) = self.not_of.get(&x) {
            return n;
        }
        let n = self.b.add_not(x);
        self.b.set_synthesized_name(n, format!("{hint}$not"));
        self.not_of.insert(x, n);
        n
    }

    fn and_chain(&mut self, name: &str, ins: &[NodeId]) -> NodeId {
        let mut acc = ins[0];
        for (k, &x) in ins[1..].iter().enumerate() {
            acc = self.b.add_and(acc, x);
            self.b.set_synthesized_name(acc, format!("{name}$and{k}"));
        }
        acc
    }

    fn resolve(&mut self, name: &str, used_at: usize) -> Result<NodeId, ParseError> {
        if let Some(&id) = self.nets.get(name) {
            return Ok(id);
        }
        let def = self
            .defs
            .get(name)
            .ok_or_else(|| ParseError::new(used_at, format!("undefined net '{name}'")))?;
        if let Some(&line) = self.visiting.get(name) {
            return Err(ParseError::new(
                line,
                format!("combinational loop through net '{name}'"),
            ));
        }
        self.visiting.insert(name.to_owned(), def.line);
        let mut ins = Vec::with_capacity(def.args.len());
        for a in &def.args {
            ins.push(self.resolve(a, def.line)?);
        }
        self.visiting.remove(name);

        let id = match def.gate {
            Gate::Dff => unreachable!("flip-flops are created up front"),
            Gate::Not => {
                if ins.len() != 1 {
                    return Err(ParseError::new(def.line, "NOT takes exactly one input"));
                }
                self.not(ins[0], &def.args[0])
            }
            Gate::And => self.and_chain(name, &ins),
            Gate::Nand => {
                let a = self.and_chain(name, &ins);
                let n = self.b.add_not(a);
                self.not_of.entry(a).or_insert(n);
                n
            }
            Gate::Or => {
                let inv: Vec<NodeId> = ins
                    .iter()
                    .zip(&def.args)
                    .map(|(&x, arg)| self.not(x, arg))
                    .collect();
                let a = self.and_chain(name, &inv);
                let n = self.b.add_not(a);
                self.not_of.entry(a).or_insert(n);
                n
            }
            Gate::Nor => {
                let inv: Vec<NodeId> = ins
                    .iter()
                    .zip(&def.args)
                    .map(|(&x, arg)| self.not(x, arg))
                    .collect();
                self.and_chain(name, &inv)
            }
        };
        self.b.set_name(id, name);
        self.nets.insert(name.to_owned(), id);
        Ok(id)
    }
}

/// Parses the BENCH subset `INPUT`, `OUTPUT`, `DFF`, `AND`, `NAND`, `OR`,
/// `NOR`, `NOT`. Nets may be used before they are defined.
pub fn parse_bench(text: &str) -> Result<CircuitGraph, ParseError> {
    let mut inputs: Vec<(String, usize)> = Vec::new();
    let mut outputs: Vec<(String, usize)> = Vec::new();
    let mut defs: HashMap<String, Def> = HashMap::new();
    let mut order: Vec<String> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        if let Some((lhs, rhs)) = t.split_once('=') {
            let name = lhs.trim().to_owned();
            if name.is_empty() {
                return Err(ParseError::new(line, "missing net name before '='"));
            }
            let (head, args) = call_args(line, rhs)?;
            let gate = Gate::parse(head)
                .ok_or_else(|| ParseError::new(line, format!("unknown gate type '{head}'")))?;
            if args.is_empty() {
                return Err(ParseError::new(line, format!("gate '{name}' has no inputs")));
            }
            if matches!(gate, Gate::Dff | Gate::Not) && args.len() != 1 {
                return Err(ParseError::new(line, format!("{head} takes exactly one input")));
            }
            if defs.contains_key(&name) || inputs.iter().any(|(n, _)| *n == name) {
                return Err(ParseError::new(line, format!("net '{name}' defined twice")));
            }
            order.push(name.clone());
            defs.insert(name, Def { gate, args, line });
        } else {
            let (head, args) = call_args(line, t)?;
            if args.len() != 1 {
                return Err(ParseError::new(line, format!("{head} takes exactly one net")));
            }
            let net = args.into_iter().next().unwrap_or_default();
            match head.to_ascii_uppercase().as_str() {
                "INPUT" => {
                    if defs.contains_key(&net) || inputs.iter().any(|(n, _)| *n == net) {
                        return Err(ParseError::new(line, format!("net '{net}' defined twice")));
                    }
                    inputs.push((net, line));
                }
                "OUTPUT" => outputs.push((net, line)),
                other => {
                    return Err(ParseError::new(line, format!("unknown declaration '{other}'")));
                }
            }
        }
    }

    let mut lw = Lowering {
        b: CircuitBuilder::new(),
        defs: &defs,
        nets: HashMap::new(),
        visiting: HashMap::new(),
        not_of: HashMap::new(),
    };
    for (name, _) in &inputs {
        let id = lw.b.add_pi();
        lw.b.set_name(id, name.clone());
        lw.nets.insert(name.clone(), id);
    }
    let mut ffs = Vec::new();
    for name in &order {
        let def = &defs[name];
        if def.gate == Gate::Dff {
            let id = lw.b.add_ff(None);
            lw.b.set_name(id, name.clone());
            lw.nets.insert(name.clone(), id);
            ffs.push((id, &def.args[0], def.line));
        }
    }
    for name in &order {
        if defs[name].gate != Gate::Dff {
            lw.resolve(name, defs[name].line)?;
        }
    }
    for (ff, d, line) in ffs {
        let d = lw.resolve(d, line)?;
        lw.b.set_ff_input(ff, d);
    }
    for (name, line) in &outputs {
        let id = lw.resolve(name, *line)?;
        lw.b.add_output(id);
    }
    Ok(lw.b.build())
}
