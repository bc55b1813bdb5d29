mod common;

use std::collections::HashMap;

use seqlearn_core::netgraph::{emit_aiger, parse_aiger, parse_bench};
use seqlearn_core::{levelize, NodeKind};

use common::{eval, same_aig, sized};

const S27: &str = include_str!("data/s27.bench");

/// Direct interpretation of the BENCH text: each named net from its gate.
fn bench_value(
    gates: &HashMap<String, (String, Vec<String>)>,
    src: &HashMap<String, bool>,
    net: &str,
) -> bool {
    if let Some(&v) = src.get(net) {
        return v;
    }
    let (op, args) = &gates[net];
    let x: Vec<bool> = args.iter().map(|a| bench_value(gates, src, a)).collect();
    match op.as_str() {
        "AND" => x.iter().all(|&b| b),
        "NAND" => !x.iter().all(|&b| b),
        "OR" => x.iter().any(|&b| b),
        "NOR" => !x.iter().any(|&b| b),
        "NOT" => !x[0],
        other => panic!("unexpected gate {other}"),
    }
}

fn bench_gates(text: &str) -> (Vec<String>, Vec<String>, HashMap<String, (String, Vec<String>)>) {
    let (mut pis, mut ffs, mut gates) = (Vec::new(), Vec::new(), HashMap::new());
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        if let Some(rest) = line.strip_prefix("INPUT(") {
            pis.push(rest.trim_end_matches(')').to_string());
        } else if line.starts_with("OUTPUT(") {
        } else {
            let (lhs, rhs) = line.split_once('=').unwrap();
            let (op, args) = rhs.trim().split_once('(').unwrap();
            let args: Vec<String> = args.trim_end_matches(')').split(',').map(|a| a.trim().to_string()).collect();
            if op == "DFF" {
                ffs.push(lhs.trim().to_string());
            } else {
                gates.insert(lhs.trim().to_string(), (op.to_string(), args));
            }
        }
    }
    (pis, ffs, gates)
}

#[test]
fn s27_structure() {
    let g = parse_bench(S27).unwrap();
    assert_eq!(g.count(NodeKind::Ff), 3);
    assert_eq!(g.pis().filter(|&v| !g.is_constant(v)).count(), 4);
    assert_eq!(g.outputs(), &[g.names().id("G17").unwrap()]);
    for n in ["G0", "G5", "G9", "G13", "G17"] {
        assert!(g.names().is_original(g.names().id(n).unwrap()), "{n}");
    }
    let plan = levelize(&g).unwrap();
    assert!(!plan.cyclic_regions.is_empty());
}

#[test]
fn s27_lowering_matches_every_gate_exhaustively() {
    let g = parse_bench(S27).unwrap();
    let (pis, ffs, gates) = bench_gates(S27);
    let free: Vec<&String> = pis.iter().chain(&ffs).collect();
    for a in 0..1usize << free.len() {
        let mut by_name = HashMap::new();
        let mut src = vec![false; g.len()];
        for (b, n) in free.iter().enumerate() {
            let bit = (a >> b) & 1 == 1;
            by_name.insert(n.to_string(), bit);
            src[g.names().id(n).unwrap()] = bit;
        }
        let mut memo = vec![None; g.len()];
        for net in gates.keys() {
            let want = bench_value(&gates, &by_name, net);
            assert_eq!(eval(&g, g.names().id(net).unwrap(), &src, &mut memo), want, "{net} at {a:07b}");
        }
    }
}

#[test]
fn s27_survives_aiger_round_trip() {
    let g = parse_bench(S27).unwrap();
    let text = emit_aiger(&g);
    let back = parse_aiger(&text).unwrap();
    assert!(same_aig(&g, &back));
    assert_eq!(emit_aiger(&back), text);
}

#[test]
fn generated_circuits_round_trip() {
    for seed in 0..10 {
        let g = sized(100 + 37 * seed as usize, seed, 0.5);
        let text = emit_aiger(&g);
        let back = parse_aiger(&text).unwrap();
        assert!(same_aig(&g, &back));
        assert_eq!(emit_aiger(&back), text);
        assert_eq!(parse_aiger(&emit_aiger(&back)).unwrap(), back);
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    let e = parse_bench("INPUT(a)\nOUTPUT(y)\ny = XOR(a, a)\n").unwrap_err();
    assert_eq!(e.line, 3);
    let e = parse_bench("INPUT(a)\nOUTPUT(y)\ny = AND(a, b)\n").unwrap_err();
    assert!(e.line >= 2, "{e}");
    let e = parse_aiger("aag 2 1 0 1 1\n2\n4\n4 2 7\n").unwrap_err();
    assert_eq!(e.line, 4, "{e}");
    assert!(parse_aiger("aig 1 1 0 0 0\n2\n").is_err());
}
