use std::collections::BTreeMap;
use std::fmt::Write;

use super::{CorrelationDevice, JointController, LocalController, Node};
use crate::error::{Error, Result};
use crate::model::DecPomdp;
use crate::scalar::Scalar;

const MAGIC: &str = "decpi-controller 1";

fn num<T: Scalar>(x: T) -> String {
    format!("{:.16e}", x.f64())
}

/// Text form of a joint controller; every probability is written with 17
/// significant digits so that reading it back is lossless.
pub fn serialize_controller<T: Scalar>(jc: &JointController<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "agents {}", jc.num_agents());
    let nc = jc.device_size();
    let _ = writeln!(out, "device {nc}");
    for qc in 0..nc {
        let row: Vec<String> = jc.device.row(qc).iter().map(|&p| num(p)).collect();
        let _ = writeln!(out, "d {qc} : {}", row.join(" "));
    }
    for (i, l) in jc.locals.iter().enumerate() {
        let _ = writeln!(
            out,
            "agent {i} nodes {} actions {} observations {}",
            l.num_nodes(),
            l.num_actions(),
            l.num_observations()
        );
        for q in 0..l.num_nodes() {
            for qc in 0..nc {
                let row: Vec<String> = l.action_row(qc, q).iter().map(|&p| num(p)).collect();
                let _ = writeln!(out, "psi {q} {qc} : {}", row.join(" "));
            }
            for qc in 0..nc {
                for a in 0..l.num_actions() {
                    for o in 0..l.num_observations() {
                        let row: Vec<String> = l
                            .next(qc, q, a, o)
                            .iter()
                            .map(|&(t, p)| format!("{t} {}", num(p)))
                            .collect();
                        let _ = writeln!(out, "eta {q} {qc} {a} {o} : {}", row.join(" "));
                    }
                }
            }
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate().peekable(),
        }
    }

    /// Next non-blank, non-comment line with its 1-based number.
    fn next(&mut self) -> Result<(usize, &'a str)> {
        for (i, raw) in self.inner.by_ref() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                return Ok((i + 1, line));
            }
        }
        Err(Error::Malformed {
            line: 0,
            msg: "unexpected end of input".into(),
        })
    }
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Malformed { line, msg: msg.into() }
}

fn parse_usize(line: usize, tok: Option<&str>) -> Result<usize> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| bad(line, "expected a non-negative integer"))
}

fn parse_prob<T: Scalar>(line: usize, tok: &str) -> Result<T> {
    tok.parse::<f64>()
        .map(T::c)
        .map_err(|_| bad(line, format!("bad number `{tok}`")))
}

/// Splits `<tag> <ints…> : <rest>` and checks the tag and indices.
fn header<'a>(line: usize, text: &'a str, tag: &str, expect: &[usize]) -> Result<&'a str> {
    let (head, rest) = text.split_once(':').ok_or_else(|| bad(line, "missing `:`"))?;
    let mut toks = head.split_whitespace();
    if toks.next() != Some(tag) {
        return Err(bad(line, format!("expected `{tag}` line")));
    }
    for &e in expect {
        if parse_usize(line, toks.next())? != e {
            return Err(bad(line, "rows out of order"));
        }
    }
    if toks.next().is_some() {
        return Err(bad(line, "too many indices"));
    }
    Ok(rest)
}

fn keyword(line: usize, toks: &mut std::str::SplitWhitespace<'_>, kw: &str) -> Result<usize> {
    if toks.next() != Some(kw) {
        return Err(bad(line, format!("expected `{kw}`")));
    }
    parse_usize(line, toks.next())
}

/// Reads the output of [`serialize_controller`].
pub fn deserialize_controller<T: Scalar>(text: &str) -> Result<JointController<T>> {
    let mut lines = Lines::new(text);
    let (ln, first) = lines.next()?;
    if first != MAGIC {
        return Err(bad(ln, format!("expected `{MAGIC}`")));
    }
    let (ln, l) = lines.next()?;
    let agents = keyword(ln, &mut l.split_whitespace(), "agents")?;
    let (ln, l) = lines.next()?;
    let nc = keyword(ln, &mut l.split_whitespace(), "device")?;
    if nc == 0 {
        return Err(bad(ln, "device needs at least one node"));
    }
    let mut rows = Vec::with_capacity(nc);
    for qc in 0..nc {
        let (ln, l) = lines.next()?;
        let rest = header(ln, l, "d", &[qc])?;
        let row = rest
            .split_whitespace()
            .map(|t| parse_prob::<T>(ln, t))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != nc {
            return Err(bad(ln, "device row has the wrong length"));
        }
        rows.push(row);
    }
    let device = CorrelationDevice::from_rows(rows).map_err(|e| bad(0, e.to_string()))?;
    let mut locals = Vec::with_capacity(agents);
    for i in 0..agents {
        let (ln, l) = lines.next()?;
        let mut toks = l.split_whitespace();
        if keyword(ln, &mut toks, "agent")? != i {
            return Err(bad(ln, "agents out of order"));
        }
        let n = keyword(ln, &mut toks, "nodes")?;
        let na = keyword(ln, &mut toks, "actions")?;
        let no = keyword(ln, &mut toks, "observations")?;
        let mut lc = LocalController::new(na, no, nc);
        for q in 0..n {
            let mut node = Node {
                action: Vec::with_capacity(nc * na),
                next: Vec::with_capacity(nc * na * no),
            };
            for qc in 0..nc {
                let (ln, l) = lines.next()?;
                let rest = header(ln, l, "psi", &[q, qc])?;
                let row = rest
                    .split_whitespace()
                    .map(|t| parse_prob::<T>(ln, t))
                    .collect::<Result<Vec<_>>>()?;
                if row.len() != na {
                    return Err(bad(ln, "action row has the wrong length"));
                }
                node.action.extend(row);
            }
            for qc in 0..nc {
                for a in 0..na {
                    for o in 0..no {
                        let (ln, l) = lines.next()?;
                        let rest = header(ln, l, "eta", &[q, qc, a, o])?;
                        let toks: Vec<&str> = rest.split_whitespace().collect();
                        if toks.len() % 2 != 0 {
                            return Err(bad(ln, "transition entries come in (node, probability) pairs"));
                        }
                        let mut row = Vec::with_capacity(toks.len() / 2);
                        for pair in toks.chunks(2) {
                            let t = parse_usize(ln, Some(pair[0]))?;
                            if t >= n {
                                return Err(bad(ln, format!("target node {t} out of range")));
                            }
                            row.push((t, parse_prob::<T>(ln, pair[1])?));
                        }
                        node.next.push(row);
                    }
                }
            }
            lc.push(node);
        }
        lc.validate().map_err(|e| bad(ln, e.to_string()))?;
        locals.push(lc);
    }
    let (ln, l) = lines.next()?;
    if l != "end" {
        return Err(bad(ln, "expected `end`"));
    }
    Ok(JointController { locals, device })
}

fn short<T: Scalar>(p: T) -> String {
    let s = format!("{:.6}", p.f64());
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Graphviz rendering: one digraph per local controller and one for the
/// device. Vertices show the action distribution; one edge per pair of
/// nodes lists every `action/observation probability` triple that moves
/// between them. Labels come from `model` when given.
pub fn export_dot<T: Scalar>(jc: &JointController<T>, model: Option<&DecPomdp<T>>) -> String {
    let nc = jc.device_size();
    let prefix = |qc: usize| if nc > 1 { format!("c{qc}: ") } else { String::new() };
    let mut out = String::new();
    for (i, l) in jc.locals.iter().enumerate() {
        let act = |a: usize| model.map_or(format!("a{a}"), |m| m.action_labels(i)[a].clone());
        let obs = |o: usize| model.map_or(format!("o{o}"), |m| m.observation_labels(i)[o].clone());
        let _ = writeln!(out, "digraph agent{i} {{");
        for q in 0..l.num_nodes() {
            let mut parts = Vec::new();
            for qc in 0..nc {
                for (a, &p) in l.action_row(qc, q).iter().enumerate() {
                    if p > T::zero() {
                        parts.push(format!("{}{} {}", prefix(qc), act(a), short(p)));
                    }
                }
            }
            let _ = writeln!(out, "  n{q} [label=\"q{q}\\n{}\"];", parts.join("\\n"));
        }
        for q in 0..l.num_nodes() {
            let mut edges: BTreeMap<usize, Vec<String>> = BTreeMap::new();
            for qc in 0..nc {
                for a in 0..l.num_actions() {
                    if l.action_prob(qc, q, a) <= T::zero() {
                        continue;
                    }
                    for o in 0..l.num_observations() {
                        for &(t, p) in l.next(qc, q, a, o) {
                            if p > T::zero() {
                                edges
                                    .entry(t)
                                    .or_default()
                                    .push(format!("{}{}/{} {}", prefix(qc), act(a), obs(o), short(p)));
                            }
                        }
                    }
                }
            }
            for (t, labels) in edges {
                let _ = writeln!(out, "  n{q} -> n{t} [label=\"{}\"];", labels.join("\\n"));
            }
        }
        out.push_str("}\n");
    }
    out.push_str("digraph device {\n");
    for qc in 0..nc {
        let _ = writeln!(out, "  c{qc} [label=\"c{qc}\"];");
    }
    for qc in 0..nc {
        for (t, &p) in jc.device.row(qc).iter().enumerate() {
            if p > T::zero() {
                let _ = writeln!(out, "  c{qc} -> c{t} [label=\"{}\"];", short(p));
            }
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::super::{make_initial, random_stochastic};
    use super::*;
    use crate::model::domains::builtin_domain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let jc = random_stochastic(&m, &[3, 2], 2, &mut rng);
        let back: JointController<f64> = deserialize_controller(&serialize_controller(&jc)).unwrap();
        assert_eq!(back, jc);
    }

    #[test]
    fn malformed_input_reports_line() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let text = serialize_controller(&make_initial(&m, &[0, 0]).unwrap());
        let broken = text.replacen("psi 0 0 :", "psi 0 1 :", 1);
        match deserialize_controller::<f64>(&broken) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dot_for_single_node() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let jc = make_initial(&m, &[1, 1]).unwrap();
        let dot = export_dot(&jc, Some(&m));
        assert_eq!(dot.matches("digraph").count(), 3);
        assert!(dot.contains("  n0 [label=\"q0\\nopen-left 1\"];"));
        assert!(dot.contains("  n0 -> n0 [label=\"open-left/hear-left 1\\nopen-left/hear-right 1\"];"));
    }
}
