//! Heuristic policy iteration: belief points sampled under fixed teammate
//! policies decide which nodes survive each backup.

use std::collections::VecDeque;
use std::fmt::Write;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controller::{evaluate_with, node_space, JointController, ValueTable};
use crate::error::{Error, Result};
use crate::model::{belief_update, observation_likelihood, BeliefState, DecPomdp, FixedAgentPolicy};
use crate::scalar::Scalar;
use crate::solver::{exhaustive_backup_with, IterationLog, IterationRecord, Termination, DEFAULT_NODE_CAP};
use crate::transform::{apply_reduction, dominance_search, DominanceWitness, NodeRef, TopTwo, TransformOptions};

/// Points closer than this in max-norm are the same point.
pub const DEDUP_TOL: f64 = 1e-9;
const MAX_RESTARTS: usize = 4;

/// A sampled belief with the `(action, observation)` path that reaches it
/// from the initial belief.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefPoint<T> {
    pub path: Vec<(usize, usize)>,
    pub belief: BeliefState<T>,
}

/// Belief points per agent. The first point of every agent is `b₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefPointSet<T> {
    pub k: usize,
    pub agents: Vec<Vec<BeliefPoint<T>>>,
}

impl<T: Scalar> BeliefPointSet<T> {
    /// Generates `k` points for every agent, each agent against its own
    /// teammate policy (`others[i]` describes the teammates of agent `i`).
    pub fn generate(
        model: &DecPomdp<T>,
        b0: &BeliefState<T>,
        k: usize,
        others: &[FixedAgentPolicy<T>],
        seed: u64,
    ) -> Result<Self> {
        if others.len() != model.num_agents() {
            return Err(Error::Dimension(format!(
                "need one teammate policy per agent ({}), got {}",
                model.num_agents(),
                others.len()
            )));
        }
        let agents = (0..model.num_agents())
            .map(|i| generate_belief_points(model, b0, k, i, &others[i], seed.wrapping_add(i as u64)))
            .collect::<Result<_>>()?;
        Ok(Self { k, agents })
    }

    pub fn points(&self, agent: usize) -> impl Iterator<Item = &BeliefState<T>> {
        self.agents[agent].iter().map(|p| &p.belief)
    }

    /// Points of all agents with duplicates removed, agent order.
    pub fn union(&self) -> Vec<BeliefState<T>> {
        let mut out: Vec<BeliefState<T>> = Vec::new();
        for p in self.agents.iter().flatten() {
            if !out.iter().any(|q| q.linf_distance(&p.belief) <= T::tol(DEDUP_TOL)) {
                out.push(p.belief.clone());
            }
        }
        out
    }

    /// One block per agent: `agent <i>` followed by one line per point,
    /// `<path> | <probabilities>`, the path written `a:o,a:o` (`-` if empty).
    pub fn to_text(&self) -> String {
        let mut out = format!("k {}\n", self.k);
        for (i, pts) in self.agents.iter().enumerate() {
            let _ = writeln!(out, "agent {i}");
            for p in pts {
                let path = if p.path.is_empty() {
                    "-".to_string()
                } else {
                    p.path.iter().map(|(a, o)| format!("{a}:{o}")).collect::<Vec<_>>().join(",")
                };
                let probs: Vec<String> = p.belief.probs().iter().map(|x| format!("{:e}", x.f64())).collect();
                let _ = writeln!(out, "{path} | {}", probs.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Malformed {
            line,
            msg: msg.to_string(),
        };
        let mut k = None;
        let mut agents: Vec<Vec<BeliefPoint<T>>> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let ln = n + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("k ") {
                k = Some(v.trim().parse().map_err(|_| bad(ln, "bad k"))?);
            } else if let Some(v) = line.strip_prefix("agent ") {
                let i: usize = v.trim().parse().map_err(|_| bad(ln, "bad agent index"))?;
                if i != agents.len() {
                    return Err(bad(ln, "agents out of order"));
                }
                agents.push(Vec::new());
            } else {
                let (path, probs) = line.split_once('|').ok_or_else(|| bad(ln, "missing `|`"))?;
                let cur = agents.last_mut().ok_or_else(|| bad(ln, "point before `agent`"))?;
                let path = path.trim();
                let path = if path == "-" {
                    Vec::new()
                } else {
                    path.split(',')
                        .map(|step| {
                            let (a, o) = step.split_once(':')?;
                            Some((a.trim().parse().ok()?, o.trim().parse().ok()?))
                        })
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad(ln, "bad path"))?
                };
                let probs = probs
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map(T::c))
                    .collect::<std::result::Result<Vec<T>, _>>()
                    .map_err(|_| bad(ln, "bad probability"))?;
                cur.push(BeliefPoint {
                    path,
                    belief: BeliefState::new(probs)?,
                });
            }
        }
        Ok(Self {
            k: k.ok_or_else(|| bad(0, "missing `k` line"))?,
            agents,
        })
    }

    /// Recomputes every point from its path and checks it against the
    /// stored belief.
    pub fn replay(&self, model: &DecPomdp<T>, b0: &BeliefState<T>, others: &[FixedAgentPolicy<T>]) -> Result<T> {
        let mut worst = T::zero();
        for (i, pts) in self.agents.iter().enumerate() {
            for p in pts {
                let mut b = b0.clone();
                for &(a, o) in &p.path {
                    b = belief_update(model, &b, i, a, o, &others[i])?;
                }
                worst = worst.max(b.linf_distance(&p.belief));
            }
        }
        Ok(worst)
    }
}

/// Breadth-first expansion from `b0` over `agent`'s `(action, observation)`
/// pairs until `k` distinct points are found. When the reachable set closes
/// first, the expansion is repeated with seeded random action orders.
pub fn generate_belief_points<T: Scalar>(
    model: &DecPomdp<T>,
    b0: &BeliefState<T>,
    k: usize,
    agent: usize,
    others: &FixedAgentPolicy<T>,
    seed: u64,
) -> Result<Vec<BeliefPoint<T>>> {
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one belief point".into()));
    }
    if b0.len() != model.num_states() {
        return Err(Error::Dimension("initial belief length".into()));
    }
    let mut points = vec![BeliefPoint {
        path: Vec::new(),
        belief: b0.clone(),
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..model.num_actions(agent)).collect();
    for round in 0..=MAX_RESTARTS {
        if points.len() >= k {
            break;
        }
        if round > 0 {
            order.shuffle(&mut rng);
        }
        let before = points.len();
        expand(model, agent, others, k, &order, &mut points)?;
        if round > 0 && points.len() == before {
            break;
        }
    }
    Ok(points)
}

fn expand<T: Scalar>(
    model: &DecPomdp<T>,
    agent: usize,
    others: &FixedAgentPolicy<T>,
    k: usize,
    order: &[usize],
    points: &mut Vec<BeliefPoint<T>>,
) -> Result<()> {
    let tol = T::tol(DEDUP_TOL);
    let mut queue = VecDeque::from([points[0].clone()]);
    let mut visited = vec![points[0].belief.clone()];
    while let Some(p) = queue.pop_front() {
        for &a in order {
            let lik = observation_likelihood(model, &p.belief, agent, a, others)?;
            for (o, &l) in lik.iter().enumerate() {
                if l <= T::zero() {
                    continue;
                }
                let b = belief_update(model, &p.belief, agent, a, o, others)?;
                if visited.iter().any(|v| v.linf_distance(&b) <= tol) {
                    continue;
                }
                visited.push(b.clone());
                let mut path = p.path.clone();
                path.push((a, o));
                let point = BeliefPoint { path, belief: b };
                if !points.iter().any(|q| q.belief.linf_distance(&point.belief) <= tol) {
                    points.push(point.clone());
                    if points.len() >= k {
                        return Ok(());
                    }
                }
                queue.push_back(point);
            }
        }
    }
    Ok(())
}

/// Keeps, for every belief point, the local nodes of the best joint node
/// at that point, together with every node they can reach. The values of
/// kept nodes are unchanged, so the restricted table is returned as is.
pub fn retain_best_nodes<T: Scalar>(
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    points: &[BeliefState<T>],
) -> Result<(JointController<T>, ValueTable<T>)> {
    if vt.space() != &node_space(jc) {
        return Err(Error::Precondition("value table does not belong to the controller".into()));
    }
    let n = jc.num_agents();
    let mut marked: Vec<Vec<bool>> = jc.sizes().iter().map(|&s| vec![false; s]).collect();
    for b in points {
        if b.len() != vt.num_states() {
            return Err(Error::Dimension("belief length".into()));
        }
        let (_, j) = vt.best_at(b.probs());
        for i in 0..n {
            marked[i][vt.space().component(j, i + 1)] = true;
        }
    }
    for (i, l) in jc.locals.iter().enumerate() {
        let mut stack: Vec<usize> = (0..l.num_nodes()).filter(|&q| marked[i][q]).collect();
        if stack.is_empty() {
            marked[i][0] = true;
            stack.push(0);
        }
        while let Some(q) = stack.pop() {
            for row in &l.node(q).next {
                for &(t, w) in row {
                    if w > T::zero() && !marked[i][t] {
                        marked[i][t] = true;
                        stack.push(t);
                    }
                }
            }
        }
    }
    let mut keep = vec![(0..jc.device_size()).collect::<Vec<_>>()];
    keep.extend(marked.iter().map(|m| (0..m.len()).filter(|&q| m[q]).collect::<Vec<_>>()));
    let mut out = jc.clone();
    for (i, l) in out.locals.iter_mut().enumerate() {
        l.retain_nodes(&keep[i + 1], &|_| unreachable!("kept nodes only reach kept nodes"));
    }
    Ok((out, vt.select(&keep)))
}

/// Point values `m(r, k)` for agent `agent`: row `r = p·|Q_{-i}| + j` is
/// belief point `p` against joint node `j` of the device and the other
/// agents.
fn point_matrix<T: Scalar>(vt: &ValueTable<T>, agent: usize, points: &[BeliefState<T>]) -> (Vec<T>, usize, usize) {
    let space = vt.space();
    let coord = agent + 1;
    let rest = space.without(coord);
    let nodes = space.radix(coord);
    let rows = points.len() * rest.size();
    let mut m = vec![T::zero(); rows * nodes];
    for (p, b) in points.iter().enumerate() {
        for j in 0..rest.size() {
            let r = p * rest.size() + j;
            for k in 0..nodes {
                let full = space.insert(&rest, j, coord, k);
                m[r * nodes + k] = vt.belief_value(b.probs(), full);
            }
        }
    }
    (m, rows, nodes)
}

fn point_dominating<T: Scalar>(
    vt: &ValueTable<T>,
    agent: usize,
    node: usize,
    points: &[BeliefState<T>],
    opts: &TransformOptions,
) -> Result<Option<DominanceWitness<T>>> {
    let (mat, rows, nodes) = point_matrix(vt, agent, points);
    let m = |r: usize, k: usize| mat[r * nodes + k];
    let top = TopTwo::compute(rows, nodes, &m);
    let threshold = T::c(opts.slack) + T::tol(opts.accept_tol);
    let found = dominance_search(rows, nodes, node, &m, &top, threshold, &opts.lp, opts.dump.as_ref())?;
    Ok(found.map(|d| DominanceWitness {
        target: NodeRef::Agent { agent, node },
        distribution: d.distribution,
        epsilon: d.epsilon,
    }))
}

/// Tries to replace `node` of `agent` by a mixture of its peers that is at
/// least as good at every belief point against every node combination of
/// the others.
pub fn point_prune_node<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    agent: usize,
    node: usize,
    points: &[BeliefState<T>],
) -> Result<Option<(JointController<T>, DominanceWitness<T>)>> {
    if agent >= jc.num_agents() || node >= jc.locals[agent].num_nodes() {
        return Err(Error::InvalidParameter(format!("no node {node} for agent {agent}")));
    }
    if jc.locals[agent].num_nodes() < 2 {
        return Err(Error::Precondition("pruning needs at least two nodes".into()));
    }
    if vt.space() != &node_space(jc) {
        return Err(Error::Precondition("value table does not belong to the controller".into()));
    }
    let opts = TransformOptions::default();
    match point_dominating(vt, agent, node, points, &opts)? {
        Some(w) => {
            let (out, _) = apply_reduction(model, jc, vt, &w, &opts)?;
            Ok(Some((out, w)))
        }
        None => Ok(None),
    }
}

/// Prunes every agent's nodes against its own points until nothing more
/// goes. Returns the controller, its values and the number of removals.
pub fn point_prune_all<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    points: &BeliefPointSet<T>,
    opts: &TransformOptions,
) -> Result<(JointController<T>, ValueTable<T>, usize)> {
    let mut jc = jc.clone();
    let mut vt = vt.clone();
    let mut removed = 0;
    let pts: Vec<Vec<BeliefState<T>>> = (0..jc.num_agents()).map(|i| points.points(i).cloned().collect()).collect();
    loop {
        let mut changed = false;
        for i in 0..jc.num_agents() {
            let mut q = 0;
            while jc.locals[i].num_nodes() >= 2 && q < jc.locals[i].num_nodes() {
                opts.check_deadline()?;
                match point_dominating(&vt, i, q, &pts[i], opts)? {
                    Some(w) => {
                        let (jc2, vt2) = apply_reduction(model, &jc, &vt, &w, opts)?;
                        jc = jc2;
                        vt = vt2;
                        removed += 1;
                        changed = true;
                    }
                    None => q += 1,
                }
            }
        }
        if !changed {
            return Ok((jc, vt, removed));
        }
    }
}

/// Settings of [`heuristic_policy_iteration`].
#[derive(Debug, Clone)]
pub struct HpiOptions {
    /// Belief points per agent.
    pub k: usize,
    pub seed: u64,
    pub node_cap: usize,
    pub wall_clock: Option<Duration>,
    pub max_iters: Option<usize>,
    pub transform: TransformOptions,
}

impl Default for HpiOptions {
    fn default() -> Self {
        Self {
            k: 10,
            seed: 0,
            node_cap: DEFAULT_NODE_CAP,
            wall_clock: Some(crate::solver::DEFAULT_WALL_CLOCK),
            max_iters: None,
            transform: TransformOptions::default(),
        }
    }
}

/// Result of [`heuristic_policy_iteration`].
#[derive(Debug, Clone)]
pub struct HpiOutcome<T> {
    pub controller: JointController<T>,
    pub values: ValueTable<T>,
    pub points: BeliefPointSet<T>,
    pub log: IterationLog,
    pub termination: Termination,
    pub note: Option<String>,
}

impl<T: Scalar> HpiOutcome<T> {
    pub fn final_value(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.value_b0)
    }
}

/// Heuristic policy iteration from `jc0`: back up, keep the best nodes at
/// the belief points, prune against the points, and stop once sizes and
/// parameters stay put.
pub fn heuristic_policy_iteration<T: Scalar>(
    model: &DecPomdp<T>,
    jc0: &JointController<T>,
    b0: &BeliefState<T>,
    others: &[FixedAgentPolicy<T>],
    opts: &HpiOptions,
) -> Result<HpiOutcome<T>> {
    heuristic_policy_iteration_with(model, jc0, b0, others, opts, &mut |_, _| {})
}

/// [`heuristic_policy_iteration`] calling `observer` after every logged
/// iteration.
pub fn heuristic_policy_iteration_with<T: Scalar>(
    model: &DecPomdp<T>,
    jc0: &JointController<T>,
    b0: &BeliefState<T>,
    others: &[FixedAgentPolicy<T>],
    opts: &HpiOptions,
    observer: &mut dyn FnMut(&IterationRecord, &JointController<T>),
) -> Result<HpiOutcome<T>> {
    jc0.validate(model)?;
    if jc0.device_size() != 1 {
        return Err(Error::Precondition("heuristic policy iteration runs without a correlation device".into()));
    }
    let start = Instant::now();
    let deadline = opts.wall_clock.map(|d| start + d);
    let topts = TransformOptions {
        deadline,
        ..opts.transform.clone()
    };
    let points = BeliefPointSet::generate(model, b0, opts.k, others, opts.seed)?;
    let all = points.union();
    let b = b0.probs();

    let mut jc = jc0.clone();
    let mut vt = evaluate_with(model, &jc, &topts.eval, None)?;
    let mut exhaustive: Vec<BigUint> = jc.sizes().into_iter().map(BigUint::from).collect();
    let mut log = IterationLog::default();
    let record = IterationRecord {
        t: 0,
        backed_up: jc.sizes(),
        sizes: jc.sizes(),
        device_size: 1,
        exhaustive: exhaustive.clone(),
        value_b0: vt.best_at(b).0.f64(),
        seconds: start.elapsed().as_secs_f64(),
        reductions: 0,
        bounded_steps: 0,
    };
    observer(&record, &jc);
    log.records.push(record);

    let mut t = 0;
    let mut note = None;
    let termination = loop {
        if opts.max_iters.is_some_and(|m| t >= m) {
            break Termination::IterationLimit;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break Termination::WallClock;
        }
        let step = (|| {
            let (backed, bvt) = exhaustive_backup_with(model, &jc, &vt, opts.node_cap)?;
            let backed_up = backed.sizes();
            let (kept, kvt) = retain_best_nodes(&backed, &bvt, &all)?;
            let dropped: usize = backed_up.iter().sum::<usize>() - kept.sizes().iter().sum::<usize>();
            let (next, nvt, pruned) = point_prune_all(model, &kept, &kvt, &points, &topts)?;
            Ok::<_, Error>((next, nvt, backed_up, dropped + pruned))
        })();
        let (next, next_vt, backed_up, reductions) = match step {
            Ok(s) => s,
            Err(e @ Error::Capacity { .. }) => {
                note = Some(e.to_string());
                break Termination::Capacity;
            }
            Err(Error::WallClock) => {
                note = Some(Error::WallClock.to_string());
                break Termination::WallClock;
            }
            Err(e) => return Err(e),
        };
        t += 1;
        exhaustive = exhaustive
            .iter()
            .enumerate()
            .map(|(i, e)| BigUint::from(model.num_actions(i)) * e.pow(model.num_observations(i) as u32))
            .collect();
        let unchanged = next.sizes() == jc.sizes() && next.max_difference(&jc).is_some_and(|d| d <= 1e-9);
        jc = next;
        vt = next_vt;
        let record = IterationRecord {
            t,
            backed_up,
            sizes: jc.sizes(),
            device_size: 1,
            exhaustive: exhaustive.clone(),
            value_b0: vt.best_at(b).0.f64(),
            seconds: start.elapsed().as_secs_f64(),
            reductions,
            bounded_steps: 0,
        };
        observer(&record, &jc);
        log.records.push(record);
        if unchanged {
            break Termination::Converged;
        }
    };
    Ok(HpiOutcome {
        controller: jc,
        values: vt,
        points,
        log,
        termination,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{evaluate, make_initial_named, Node};
    use crate::model::domains::{builtin_domain, default_teammate_policy};

    fn tiger() -> DecPomdp<f64> {
        builtin_domain("dec-tiger", &[]).unwrap()
    }

    fn tiger_others(m: &DecPomdp<f64>) -> Vec<FixedAgentPolicy<f64>> {
        (0..2).map(|i| default_teammate_policy("dec-tiger", m, i)).collect()
    }

    #[test]
    fn one_point_is_the_root() {
        let m = tiger();
        let b0 = BeliefState::uniform(2);
        let pts = generate_belief_points(&m, &b0, 1, 0, &tiger_others(&m)[0], 3).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(pts[0].path.is_empty());
    }

    #[test]
    fn tiger_ten_points_replay() {
        let m = tiger();
        let b0 = BeliefState::uniform(2);
        let others = tiger_others(&m);
        let set = BeliefPointSet::generate(&m, &b0, 10, &others, 1).unwrap();
        for pts in &set.agents {
            assert_eq!(pts.len(), 10);
            assert_eq!(pts[0].belief, b0);
            for (a, p) in pts.iter().enumerate() {
                for q in &pts[a + 1..] {
                    assert!(p.belief.linf_distance(&q.belief) > DEDUP_TOL);
                }
            }
        }
        assert!(set.replay(&m, &b0, &others).unwrap() < 1e-12);
        let back = BeliefPointSet::<f64>::from_text(&set.to_text()).unwrap();
        assert_eq!(back.agents.len(), 2);
        for (x, y) in back.agents.iter().flatten().zip(set.agents.iter().flatten()) {
            assert_eq!(x.path, y.path);
            assert!(x.belief.linf_distance(&y.belief) < 1e-15);
        }
    }

    #[test]
    fn duplicate_node_is_point_pruned() {
        let m = tiger();
        let mut jc = make_initial_named(&m, &["listen", "listen"]).unwrap();
        jc.locals[1].push(Node::deterministic(0, &[0, 0], 3, 1));
        let vt = evaluate(&m, &jc).unwrap();
        let pts = vec![BeliefState::uniform(2)];
        let (out, w) = point_prune_node(&m, &jc, &vt, 1, 1, &pts).unwrap().unwrap();
        assert_eq!(out.sizes(), vec![1, 1]);
        assert!(w.epsilon.abs() < 1e-9);
    }

    #[test]
    fn retention_keeps_the_best_value() {
        let m = tiger();
        let jc = make_initial_named(&m, &["open-left", "open-left"]).unwrap();
        let vt = evaluate(&m, &jc).unwrap();
        let (b, bvt) = exhaustive_backup_with(&m, &jc, &vt, DEFAULT_NODE_CAP).unwrap();
        let b0 = BeliefState::uniform(2);
        let (kept, kvt) = retain_best_nodes(&b, &bvt, &[b0.clone()]).unwrap();
        assert!(kept.sizes().iter().all(|&s| s <= 2));
        assert!((kvt.best_at(b0.probs()).0 - bvt.best_at(b0.probs()).0).abs() < 1e-12);
        let direct = evaluate(&m, &kept).unwrap();
        for (x, y) in kvt.values().iter().zip(direct.values()) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}
