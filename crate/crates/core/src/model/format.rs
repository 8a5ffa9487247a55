//! Reader and writer for the `.dpomdp` text problem format.
//!
//! The grammar is documented in `docs/formats.md`. Later body lines
//! override earlier ones; entries never mentioned are zero.

use std::fmt::Write;

use super::{DecPomdp, ModelBuilder, DIST_TOL};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn syntax(line: usize, msg: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        msg: msg.into(),
    }
}

fn labels_or_count(tokens: &[&str], prefix: &str) -> Vec<String> {
    if tokens.len() == 1 {
        if let Ok(n) = tokens[0].parse::<usize>() {
            return (0..n).map(|k| format!("{prefix}{k}")).collect();
        }
    }
    tokens.iter().map(|t| t.to_string()).collect()
}

fn number<T: Scalar>(tok: &str, line: usize) -> Result<T> {
    tok.parse::<f64>()
        .map(T::c)
        .map_err(|_| syntax(line, format!("expected a number, found `{tok}`")))
}

/// Resolves a single label, index or wildcard to the matching indices.
fn resolve(tok: &str, labels: &[String], what: &str, line: usize) -> Result<Vec<usize>> {
    if tok == "*" {
        return Ok((0..labels.len()).collect());
    }
    if let Some(k) = labels.iter().position(|l| l == tok) {
        return Ok(vec![k]);
    }
    match tok.parse::<usize>() {
        Ok(k) if k < labels.len() => Ok(vec![k]),
        Ok(k) => Err(syntax(line, format!("{what} index {k} out of range (have {})", labels.len()))),
        Err(_) => Err(syntax(line, format!("unknown {what} `{tok}`"))),
    }
}

/// Resolves a space-separated joint tuple (one token per agent, or a single
/// `*`) to all matching joint indices.
fn resolve_joint(field: &str, sets: &[Vec<String>], what: &str, line: usize) -> Result<Vec<usize>> {
    let toks: Vec<&str> = field.split_whitespace().collect();
    let n = sets.len();
    let toks: Vec<&str> = if toks.len() == 1 && toks[0] == "*" {
        vec!["*"; n]
    } else {
        toks
    };
    if toks.len() != n {
        return Err(Error::Dimension(format!(
            "line {line}: joint {what} has {} components, model has {n} agents",
            toks.len()
        )));
    }
    let mut out = vec![0usize];
    for (i, tok) in toks.iter().enumerate() {
        let opts = resolve(tok, &sets[i], what, line)?;
        let radix = sets[i].len();
        out = out
            .iter()
            .flat_map(|&base| opts.iter().map(move |&o| base * radix + o))
            .collect();
    }
    Ok(out)
}

#[derive(Default)]
struct Header {
    agents: Option<usize>,
    discount: Option<f64>,
    states: Option<Vec<String>>,
    actions: Vec<Vec<String>>,
    observations: Vec<Vec<String>>,
    start: Option<(Vec<String>, usize)>,
}

enum Pending {
    None,
    Actions,
    Observations,
    Start,
    TRow(Vec<usize>, Vec<usize>),
}

/// Parses a problem file into a validated model.
pub fn parse_dpomdp<T: Scalar>(text: &str) -> Result<DecPomdp<T>> {
    let mut h = Header::default();
    let mut builder: Option<ModelBuilder<T>> = None;
    let mut pending = Pending::None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        match std::mem::replace(&mut pending, Pending::None) {
            Pending::Actions => {
                let toks: Vec<&str> = content.split_whitespace().collect();
                h.actions.push(labels_or_count(&toks, "a"));
                if h.actions.len() < h.agents.unwrap_or(0) {
                    pending = Pending::Actions;
                }
                continue;
            }
            Pending::Observations => {
                let toks: Vec<&str> = content.split_whitespace().collect();
                h.observations.push(labels_or_count(&toks, "o"));
                if h.observations.len() < h.agents.unwrap_or(0) {
                    pending = Pending::Observations;
                }
                continue;
            }
            Pending::Start => {
                h.start = Some((content.split_whitespace().map(String::from).collect(), line));
                continue;
            }
            Pending::TRow(jas, ss) => {
                let b = builder.as_mut().expect("body started");
                let toks: Vec<&str> = content.split_whitespace().collect();
                let ns = b.num_states();
                if toks.len() != ns {
                    return Err(Error::Dimension(format!(
                        "line {line}: transition row has {} entries, expected {ns}",
                        toks.len()
                    )));
                }
                let row = toks.iter().map(|t| number::<T>(t, line)).collect::<Result<Vec<_>>>()?;
                for &ja in &jas {
                    for &s in &ss {
                        for (s2, &p) in row.iter().enumerate() {
                            b.set_transition(ja, s, s2, p);
                        }
                    }
                }
                continue;
            }
            Pending::None => {}
        }

        let (key, rest) = match content.split_once(':') {
            Some((k, r)) => (k.trim(), r.trim()),
            None => return Err(syntax(line, format!("expected `key: value`, found `{content}`"))),
        };
        match key {
            "agents" | "discount" | "values" | "states" | "start" | "actions" | "observations" => {
                if builder.is_some() {
                    return Err(syntax(line, format!("header field `{key}` after body lines")));
                }
            }
            _ => {}
        }
        match key {
            "agents" => {
                let n: usize = rest
                    .parse()
                    .map_err(|_| syntax(line, "agents must be a positive integer"))?;
                if n == 0 {
                    return Err(syntax(line, "agents must be a positive integer"));
                }
                h.agents = Some(n);
            }
            "discount" => h.discount = Some(number::<f64>(rest, line)?),
            "values" => {
                if rest != "reward" {
                    return Err(syntax(line, format!("unsupported values `{rest}` (only `reward`)")));
                }
            }
            "states" => {
                let toks: Vec<&str> = rest.split_whitespace().collect();
                if toks.is_empty() {
                    return Err(syntax(line, "states needs a count or labels"));
                }
                h.states = Some(labels_or_count(&toks, "s"));
            }
            "start" => {
                if rest.is_empty() {
                    pending = Pending::Start;
                } else {
                    h.start = Some((rest.split_whitespace().map(String::from).collect(), line));
                }
            }
            "actions" | "observations" => {
                if h.agents.is_none() {
                    return Err(syntax(line, format!("`{key}` before `agents`")));
                }
                if !rest.is_empty() {
                    return Err(syntax(line, format!("`{key}:` lists follow on the next lines")));
                }
                pending = if key == "actions" {
                    Pending::Actions
                } else {
                    Pending::Observations
                };
            }
            "T" | "O" | "R" => {
                if builder.is_none() {
                    builder = Some(start_body::<T>(&h, line)?);
                }
                let b = builder.as_mut().expect("just created");
                let fields: Vec<&str> = rest.split(':').map(str::trim).collect();
                match key {
                    "T" => body_t(b, &fields, line, &mut pending)?,
                    "O" => body_o(b, &fields, line)?,
                    _ => body_r(b, &fields, line)?,
                }
            }
            other => return Err(syntax(line, format!("unknown key `{other}`"))),
        }
    }
    match pending {
        Pending::None => {}
        _ => return Err(syntax(text.lines().count(), "unexpected end of file")),
    }
    let b = match builder {
        Some(b) => b,
        None => start_body::<T>(&h, text.lines().count())?,
    };
    b.build_with_tolerance(DIST_TOL)
}

fn start_body<T: Scalar>(h: &Header, line: usize) -> Result<ModelBuilder<T>> {
    let n = h.agents.ok_or_else(|| syntax(line, "missing `agents`"))?;
    let discount = h.discount.ok_or_else(|| syntax(line, "missing `discount`"))?;
    let states = h.states.clone().ok_or_else(|| syntax(line, "missing `states`"))?;
    if h.actions.len() != n {
        return Err(Error::Dimension(format!("{} action lines for {n} agents", h.actions.len())));
    }
    if h.observations.len() != n {
        return Err(Error::Dimension(format!(
            "{} observation lines for {n} agents",
            h.observations.len()
        )));
    }
    let mut b = ModelBuilder::new(states, h.actions.clone(), h.observations.clone(), T::c(discount));
    if let Some((toks, sline)) = &h.start {
        let ns = b.num_states();
        if toks.len() == 1 && toks[0] == "uniform" {
            // already uniform
        } else if toks.len() == 1 && ns > 1 || (ns == 1 && toks[0].parse::<f64>().is_err()) {
            let s = resolve(&toks[0], &b.states, "state", *sline)?;
            let mut init = vec![T::zero(); ns];
            init[s[0]] = T::one();
            b.initial = init;
        } else {
            if toks.len() != ns {
                return Err(Error::Dimension(format!(
                    "line {sline}: start has {} entries, expected {ns}",
                    toks.len()
                )));
            }
            b.initial = toks.iter().map(|t| number::<T>(t, *sline)).collect::<Result<_>>()?;
        }
    }
    Ok(b)
}

fn body_t<T: Scalar>(b: &mut ModelBuilder<T>, f: &[&str], line: usize, pending: &mut Pending) -> Result<()> {
    let ns = b.num_states();
    let jas = resolve_joint(f[0], &b.actions, "action", line)?;
    match f.len() {
        2 if f[1] == "uniform" || f[1] == "identity" => {
            let uniform = T::one() / T::c(ns as f64);
            for &ja in &jas {
                for s in 0..ns {
                    for s2 in 0..ns {
                        let p = match f[1] {
                            "uniform" => uniform,
                            _ if s == s2 => T::one(),
                            _ => T::zero(),
                        };
                        b.set_transition(ja, s, s2, p);
                    }
                }
            }
        }
        3 => {
            let ss = resolve(f[1], &b.states, "state", line)?;
            match f[2] {
                "" => *pending = Pending::TRow(jas, ss),
                "uniform" => {
                    let uniform = T::one() / T::c(ns as f64);
                    for &ja in &jas {
                        for &s in &ss {
                            for s2 in 0..ns {
                                b.set_transition(ja, s, s2, uniform);
                            }
                        }
                    }
                }
                other => {
                    let toks: Vec<&str> = other.split_whitespace().collect();
                    if toks.len() != ns {
                        return Err(syntax(line, "expected `uniform`, a full row, or `: s' : p`"));
                    }
                    let row = toks.iter().map(|t| number::<T>(t, line)).collect::<Result<Vec<_>>>()?;
                    for &ja in &jas {
                        for &s in &ss {
                            for (s2, &p) in row.iter().enumerate() {
                                b.set_transition(ja, s, s2, p);
                            }
                        }
                    }
                }
            }
        }
        4 => {
            let ss = resolve(f[1], &b.states, "state", line)?;
            let s2s = resolve(f[2], &b.states, "state", line)?;
            let p = number::<T>(f[3], line)?;
            for &ja in &jas {
                for &s in &ss {
                    for &s2 in &s2s {
                        b.set_transition(ja, s, s2, p);
                    }
                }
            }
        }
        _ => return Err(syntax(line, "malformed T line")),
    }
    Ok(())
}

fn body_o<T: Scalar>(b: &mut ModelBuilder<T>, f: &[&str], line: usize) -> Result<()> {
    let ns = b.num_states();
    let no = b.joint_observations.size();
    let jas = resolve_joint(f[0], &b.actions, "action", line)?;
    let uniform = T::one() / T::c(no as f64);
    match f.len() {
        2 if f[1] == "uniform" => {
            for &ja in &jas {
                for s2 in 0..ns {
                    for jo in 0..no {
                        b.set_observation(ja, s2, jo, uniform);
                    }
                }
            }
        }
        3 if f[2] == "uniform" => {
            let s2s = resolve(f[1], &b.states, "state", line)?;
            for &ja in &jas {
                for &s2 in &s2s {
                    for jo in 0..no {
                        b.set_observation(ja, s2, jo, uniform);
                    }
                }
            }
        }
        4 => {
            let s2s = resolve(f[1], &b.states, "state", line)?;
            let jos = resolve_joint(f[2], &b.observations, "observation", line)?;
            let p = number::<T>(f[3], line)?;
            for &ja in &jas {
                for &s2 in &s2s {
                    for &jo in &jos {
                        b.set_observation(ja, s2, jo, p);
                    }
                }
            }
        }
        _ => return Err(syntax(line, "malformed O line")),
    }
    Ok(())
}

fn body_r<T: Scalar>(b: &mut ModelBuilder<T>, f: &[&str], line: usize) -> Result<()> {
    if f.len() != 5 {
        return Err(syntax(line, "malformed R line (expected `R: <a> : <s> : * : * : r`)"));
    }
    if f[2] != "*" || !f[3].split_whitespace().all(|t| t == "*") {
        return Err(syntax(
            line,
            "rewards depending on next state or observation are not supported; use `*`",
        ));
    }
    let jas = resolve_joint(f[0], &b.actions, "action", line)?;
    let ss = resolve(f[1], &b.states, "state", line)?;
    let r = number::<T>(f[4], line)?;
    for &ja in &jas {
        for &s in &ss {
            b.set_reward(s, ja, r);
        }
    }
    Ok(())
}

/// Writes a model in the problem format. Every nonzero entry is written
/// explicitly with a round-trip exact decimal representation.
pub fn write_dpomdp<T: Scalar>(model: &DecPomdp<T>) -> String {
    let mut out = String::new();
    let n = model.num_agents();
    let _ = writeln!(out, "agents: {n}");
    let _ = writeln!(out, "discount: {}", model.discount().f64());
    out.push_str("values: reward\n");
    let _ = writeln!(out, "states: {}", model.state_labels().join(" "));
    let start: Vec<String> = model.initial_belief().iter().map(|p| p.f64().to_string()).collect();
    let _ = writeln!(out, "start: {}", start.join(" "));
    out.push_str("actions:\n");
    for i in 0..n {
        let _ = writeln!(out, "{}", model.action_labels(i).join(" "));
    }
    out.push_str("observations:\n");
    for i in 0..n {
        let _ = writeln!(out, "{}", model.observation_labels(i).join(" "));
    }
    let ja_space = model.joint_actions();
    let jo_space = model.joint_observations();
    let ja_name = |ja: usize| -> String {
        ja_space
            .decode(ja)
            .iter()
            .enumerate()
            .map(|(i, &a)| model.action_labels(i)[a].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let jo_name = |jo: usize| -> String {
        jo_space
            .decode(jo)
            .iter()
            .enumerate()
            .map(|(i, &o)| model.observation_labels(i)[o].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let states = model.state_labels();
    for ja in 0..ja_space.size() {
        for s in 0..model.num_states() {
            for &(s2, p) in model.transitions_from(ja, s) {
                let _ = writeln!(out, "T: {} : {} : {} : {}", ja_name(ja), states[s], states[s2], p.f64());
            }
        }
    }
    for ja in 0..ja_space.size() {
        for s2 in 0..model.num_states() {
            for &(jo, p) in model.observations_at(ja, s2) {
                let _ = writeln!(out, "O: {} : {} : {} : {}", ja_name(ja), states[s2], jo_name(jo), p.f64());
            }
        }
    }
    for ja in 0..ja_space.size() {
        for s in 0..model.num_states() {
            let r = model.reward(s, ja);
            if r != T::zero() {
                let _ = writeln!(out, "R: {} : {} : * : * : {}", ja_name(ja), states[s], r.f64());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "\
# two-state toy
agents: 2
discount: 0.5
values: reward
states: left right
start: uniform
actions:
go stay
2
observations:
ping
o1 o2
T: * : uniform
T: stay * : left : left : 1
T: stay * : left : right : 0
O: * : uniform
R: go * : left : * : * : 3.5
";

    #[test]
    fn parses_wildcards_and_overrides() {
        let m: DecPomdp<f64> = parse_dpomdp(TINY).unwrap();
        assert_eq!(m.num_agents(), 2);
        assert_eq!(m.action_labels(1), &["a0".to_string(), "a1".to_string()]);
        let stay_any = m.joint_actions().encode(&[1, 0]);
        assert_eq!(m.transition(stay_any, 0, 0), 1.0);
        assert_eq!(m.transition(stay_any, 1, 0), 0.5);
        assert_eq!(m.observation(0, 1, 1), 0.5);
        assert_eq!(m.reward(0, 1), 3.5);
        assert_eq!(m.reward(1, 1), 0.0);
        assert_eq!(m.initial_belief(), &[0.5, 0.5]);
    }

    #[test]
    fn reports_bad_row_sum() {
        let text = TINY.replace("left : left : 1", "left : left : 0.9");
        match parse_dpomdp::<f64>(&text) {
            Err(Error::Distribution { what, .. }) => assert_eq!(what, "transition"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_syntax_line() {
        let text = TINY.replace("R: go * : left : * : * : 3.5", "R: go * : left : * : * : abc");
        match parse_dpomdp::<f64>(&text) {
            Err(Error::Syntax { line, .. }) => assert_eq!(line, 17),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_joint_arity() {
        let text = TINY.replace("T: stay * : left : left : 1", "T: stay : left : left : 1");
        assert!(matches!(parse_dpomdp::<f64>(&text), Err(Error::Dimension(_))));
    }

    #[test]
    fn row_form_and_identity() {
        let text = "\
agents: 1
discount: 0.9
states: 3
start: s1
actions:
2
observations:
1
T: a0 : identity
T: a1 : s0 :
0.2 0.3 0.5
T: a1 : s1 : uniform
T: a1 : s2 : 0 0 1
O: * : * : * : 1
";
        let m: DecPomdp<f64> = parse_dpomdp(text).unwrap();
        assert_eq!(m.initial_belief(), &[0.0, 1.0, 0.0]);
        assert_eq!(m.transition(0, 2, 2), 1.0);
        assert_eq!(m.transition(1, 0, 2), 0.5);
        assert!((m.transition(1, 1, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn writer_round_trips() {
        let m: DecPomdp<f64> = parse_dpomdp(TINY).unwrap();
        let again: DecPomdp<f64> = parse_dpomdp(&write_dpomdp(&m)).unwrap();
        assert_eq!(m.max_difference(&again), Some(0.0));
    }
}
