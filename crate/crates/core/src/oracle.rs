//! Brute-force references: policy-tree enumeration, Monte-Carlo simulation
//! of a controller, and a grid search over independent memoryless policies.

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{evaluate, JointController};
use crate::error::{Error, Result};
use crate::joint::JointSpace;
use crate::linalg::solve_dense;
use crate::model::{BeliefState, DecPomdp};
use crate::scalar::Scalar;

/// Largest number of joint trees [`best_tree_value`] will enumerate.
pub const TREE_CAP: usize = 1_000_000;

/// Deterministic local policy tree whose leaves name tail controller nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyTree {
    Leaf(usize),
    Node { action: usize, children: Vec<PolicyTree> },
}

impl PolicyTree {
    pub fn depth(&self) -> usize {
        match self {
            PolicyTree::Leaf(_) => 0,
            PolicyTree::Node { children, .. } => 1 + children.first().map_or(0, PolicyTree::depth),
        }
    }
}

/// `|A|^{(|Ω|^t − 1)/(|Ω| − 1)} · |Q|^{|Ω|^t}`: depth-`t` trees over a tail
/// of `tail` nodes.
pub fn tree_count(actions: usize, observations: usize, tail: usize, depth: usize) -> BigUint {
    let mut internal = BigUint::from(0u32);
    let mut level = BigUint::from(1u32);
    for _ in 0..depth {
        internal += &level;
        level *= observations;
    }
    let leaves: u32 = level.try_into().unwrap_or(u32::MAX);
    let internal: u32 = internal.try_into().unwrap_or(u32::MAX);
    BigUint::from(actions).pow(internal) * BigUint::from(tail).pow(leaves)
}

/// Every depth-`t` tree in a fixed order.
pub fn enumerate_trees(actions: usize, observations: usize, tail: usize, depth: usize) -> Vec<PolicyTree> {
    if depth == 0 {
        return (0..tail).map(PolicyTree::Leaf).collect();
    }
    let sub = enumerate_trees(actions, observations, tail, depth - 1);
    let mut out = Vec::new();
    let combos = sub.len().pow(observations as u32);
    for a in 0..actions {
        for c in 0..combos {
            let mut rest = c;
            let mut children = vec![PolicyTree::Leaf(0); observations];
            for o in (0..observations).rev() {
                children[o] = sub[rest % sub.len()].clone();
                rest /= sub.len();
            }
            out.push(PolicyTree::Node { action: a, children });
        }
    }
    out
}

/// Maximum over joint depth-`t` deterministic trees (and the tail's device
/// node) of the expected discounted `t`-step reward from `b` plus `β^t`
/// times the tail value where the trees end.
pub fn best_tree_value<T: Scalar>(
    model: &DecPomdp<T>,
    tail: &JointController<T>,
    depth: usize,
    b: &BeliefState<T>,
) -> Result<T> {
    let n = model.num_agents();
    if b.len() != model.num_states() {
        return Err(Error::Dimension("belief length".into()));
    }
    if depth > 2 {
        return Err(Error::OracleLimit(format!("depth {depth} exceeds 2")));
    }
    let mut joint = BigUint::from(1u32);
    for i in 0..n {
        joint *= tree_count(
            model.num_actions(i),
            model.num_observations(i),
            tail.locals[i].num_nodes(),
            depth,
        );
    }
    if joint > BigUint::from(TREE_CAP) {
        return Err(Error::OracleLimit(format!("{joint} joint trees exceed {TREE_CAP}")));
    }
    let vt = evaluate(model, tail)?;
    let trees: Vec<Vec<PolicyTree>> = (0..n)
        .map(|i| {
            enumerate_trees(
                model.num_actions(i),
                model.num_observations(i),
                tail.locals[i].num_nodes(),
                depth,
            )
        })
        .collect();
    let ns = model.num_states();
    let nc = tail.device_size();
    let combos = JointSpace::new(trees.iter().map(Vec::len).collect());
    let mut coords = vec![0; n];
    let mut best = T::neg_infinity();
    for c in 0..combos.size() {
        combos.decode_into(c, &mut coords);
        let chosen: Vec<&PolicyTree> = coords.iter().enumerate().map(|(i, &k)| &trees[i][k]).collect();
        let values = tree_values(model, tail, &vt, &chosen);
        for qc in 0..nc {
            let v: T = (0..ns).map(|s| b.probs()[s] * values[qc * ns + s]).sum();
            if v > best {
                best = v;
            }
        }
    }
    Ok(best)
}

/// `V(s, q_c)` of a joint tree, laid out `[q_c][s]`.
fn tree_values<T: Scalar>(
    model: &DecPomdp<T>,
    tail: &JointController<T>,
    vt: &crate::controller::ValueTable<T>,
    trees: &[&PolicyTree],
) -> Vec<T> {
    let ns = model.num_states();
    let nc = tail.device_size();
    if let PolicyTree::Leaf(_) = trees[0] {
        let mut coords = vec![0; trees.len() + 1];
        let mut out = vec![T::zero(); nc * ns];
        for qc in 0..nc {
            coords[0] = qc;
            for (i, t) in trees.iter().enumerate() {
                coords[i + 1] = match t {
                    PolicyTree::Leaf(q) => *q,
                    PolicyTree::Node { .. } => unreachable!("uniform depth"),
                };
            }
            let j = vt.space().encode(&coords);
            out[qc * ns..(qc + 1) * ns].copy_from_slice(vt.column(j));
        }
        return out;
    }
    let actions: Vec<usize> = trees
        .iter()
        .map(|t| match t {
            PolicyTree::Node { action, .. } => *action,
            PolicyTree::Leaf(_) => unreachable!("uniform depth"),
        })
        .collect();
    let ja = model.joint_actions().encode(&actions);
    let jos = model.joint_observations();
    let beta = model.discount();
    // children values for every joint observation, computed on demand
    let mut child: Vec<Option<Vec<T>>> = vec![None; jos.size()];
    let mut out = vec![T::zero(); nc * ns];
    for qc in 0..nc {
        for s in 0..ns {
            let mut v = model.reward(s, ja);
            for &(s2, p) in model.transitions_from(ja, s) {
                for &(jo, o) in model.observations_at(ja, s2) {
                    let vals = child[jo].get_or_insert_with(|| {
                        let obs = jos.decode(jo);
                        let kids: Vec<&PolicyTree> = trees
                            .iter()
                            .zip(&obs)
                            .map(|(t, &oi)| match t {
                                PolicyTree::Node { children, .. } => &children[oi],
                                PolicyTree::Leaf(_) => unreachable!("uniform depth"),
                            })
                            .collect();
                        tree_values(model, tail, vt, &kids)
                    });
                    let cont: T = (0..nc).map(|q2| tail.device.row(qc)[q2] * vals[q2 * ns + s2]).sum();
                    v += beta * p * o * cont;
                }
            }
            out[qc * ns + s] = v;
        }
    }
    out
}

/// Where a simulation starts.
#[derive(Debug, Clone)]
pub enum Start<T> {
    State(usize),
    Belief(BeliefState<T>),
}

/// Episodes needed so that truncation after `horizon` steps costs at most
/// `tol`: smallest `h` with `β^h R_max / (1 − β) ≤ tol`.
pub fn truncation_horizon(beta: f64, r_max: f64, tol: f64) -> usize {
    if r_max == 0.0 || beta == 0.0 {
        return 1;
    }
    let mut h = 0;
    let mut bound = r_max / (1.0 - beta);
    while bound > tol && h < 100_000 {
        bound *= beta;
        h += 1;
    }
    h.max(1)
}

fn sample<R: Rng>(rng: &mut R, probs: impl Iterator<Item = (usize, f64)>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in probs {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// Mean discounted return of `horizon`-step episodes from joint node
/// `joint = (q_c, q_1, …, q_n)`, with its standard error.
pub fn monte_carlo_value<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    start: &Start<T>,
    joint: &[usize],
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    jc.validate(model)?;
    let n = model.num_agents();
    if joint.len() != n + 1 || joint[0] >= jc.device_size() || (0..n).any(|i| joint[i + 1] >= jc.locals[i].num_nodes())
    {
        return Err(Error::InvalidParameter("joint node out of range".into()));
    }
    if episodes < 2 {
        return Err(Error::InvalidParameter("need at least two episodes".into()));
    }
    let b: Vec<f64> = match start {
        Start::State(s) if *s < model.num_states() => {
            let mut v = vec![0.0; model.num_states()];
            v[*s] = 1.0;
            v
        }
        Start::State(s) => return Err(Error::InvalidParameter(format!("state {s} out of range"))),
        Start::Belief(b) if b.len() == model.num_states() => b.probs().iter().map(|x| x.f64()).collect(),
        Start::Belief(_) => return Err(Error::Dimension("belief length".into())),
    };
    let beta = model.discount().f64();
    let jas = model.joint_actions();
    let jos = model.joint_observations();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actions = vec![0; n];
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..episodes {
        let mut s = sample(&mut rng, b.iter().copied().enumerate());
        let mut q = joint.to_vec();
        let mut ret = 0.0;
        let mut disc = 1.0;
        for _ in 0..horizon {
            for i in 0..n {
                let row = jc.locals[i].action_row(q[0], q[i + 1]);
                actions[i] = sample(&mut rng, row.iter().map(|x| x.f64()).enumerate());
            }
            let ja = jas.encode(&actions);
            ret += disc * model.reward(s, ja).f64();
            disc *= beta;
            let s2 = sample(&mut rng, model.transitions_from(ja, s).iter().map(|&(k, p)| (k, p.f64())));
            let jo = sample(&mut rng, model.observations_at(ja, s2).iter().map(|&(k, p)| (k, p.f64())));
            let obs = jos.decode(jo);
            let qc = q[0];
            for i in 0..n {
                let next = jc.locals[i].next(qc, q[i + 1], actions[i], obs[i]);
                q[i + 1] = sample(&mut rng, next.iter().map(|&(k, p)| (k, p.f64())));
            }
            q[0] = sample(&mut rng, jc.device.row(qc).iter().map(|x| x.f64()).enumerate());
            s = s2;
        }
        sum += ret;
        sq += ret * ret;
    }
    let m = episodes as f64;
    let mean = sum / m;
    let var = ((sq - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok((mean, (var / m).sqrt()))
}

/// Action distributions on a grid of step `resolution`.
fn simplex_grid(actions: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(left - k, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut raw = Vec::new();
    rec(steps, actions, &mut Vec::new(), &mut raw);
    raw.into_iter()
        .map(|c| c.into_iter().map(|k| k as f64 / steps as f64).collect())
        .collect()
}

/// Per-state value of every agent playing its state-independent action
/// distribution forever.
pub fn memoryless_value<T: Scalar>(model: &DecPomdp<T>, dists: &[Vec<f64>]) -> Result<Vec<f64>> {
    let ns = model.num_states();
    let jas = model.joint_actions();
    let beta = model.discount().f64();
    let mut a = vec![0.0; ns * ns];
    let mut r = vec![0.0; ns];
    for s in 0..ns {
        a[s * ns + s] = 1.0;
    }
    for ja in 0..jas.size() {
        let coords = jas.decode(ja);
        let p: f64 = coords.iter().enumerate().map(|(i, &ai)| dists[i][ai]).product();
        if p == 0.0 {
            continue;
        }
        for s in 0..ns {
            r[s] += p * model.reward(s, ja).f64();
            for &(s2, t) in model.transitions_from(ja, s) {
                a[s * ns + s2] -= beta * p * t.f64();
            }
        }
    }
    solve_dense(a, r)
}

/// Grid search over independent state-independent memoryless policies:
/// the best worst-state value and the distributions attaining it.
pub fn memoryless_independent_search<T: Scalar>(model: &DecPomdp<T>, resolution: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::InvalidParameter(format!("resolution {resolution} must lie in (0, 1]")));
    }
    let steps = (1.0 / resolution).round().max(1.0) as usize;
    let grids: Vec<Vec<Vec<f64>>> = (0..model.num_agents())
        .map(|i| simplex_grid(model.num_actions(i), steps))
        .collect();
    let total: f64 = grids.iter().map(|g| g.len() as f64).product();
    if total > TREE_CAP as f64 {
        return Err(Error::OracleLimit(format!("{total} grid policies exceed {TREE_CAP}")));
    }
    let space = JointSpace::new(grids.iter().map(Vec::len).collect());
    let mut coords = vec![0; space.dims()];
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for k in 0..space.size() {
        space.decode_into(k, &mut coords);
        let dists: Vec<Vec<f64>> = coords.iter().enumerate().map(|(i, &c)| grids[i][c].clone()).collect();
        let v = memoryless_value(model, &dists)?;
        let worst = v.iter().copied().fold(f64::INFINITY, f64::min);
        if worst > best.0 {
            best = (worst, dists);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::make_initial_named;
    use crate::model::domains::builtin_domain;
    use crate::solver::exhaustive_backup;

    #[test]
    fn counts_match_enumeration() {
        for (a, o, q, t) in [(3, 2, 1, 1), (3, 2, 1, 2), (2, 2, 2, 1), (2, 1, 3, 2), (2, 3, 1, 0)] {
            let n = enumerate_trees(a, o, q, t).len();
            assert_eq!(tree_count(a, o, q, t), BigUint::from(n));
        }
        assert_eq!(tree_count(3, 2, 1, 1), BigUint::from(3u32));
        assert!(enumerate_trees(3, 2, 2, 2).iter().all(|t| t.depth() == 2));
    }

    #[test]
    fn depth_zero_is_the_tail() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let jc = make_initial_named(&m, &["open-left", "open-left"]).unwrap();
        let v = best_tree_value(&m, &jc, 0, &BeliefState::uniform(2)).unwrap();
        assert!((v + 150.0).abs() < 1e-9);
    }

    #[test]
    fn depth_one_matches_a_backup() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let jc = make_initial_named(&m, &["open-left", "open-left"]).unwrap();
        let b = BeliefState::uniform(2);
        let v = best_tree_value(&m, &jc, 1, &b).unwrap();
        let backed = exhaustive_backup(&m, &jc, 100).unwrap();
        let vt = evaluate(&m, &backed).unwrap();
        assert!((v - vt.best_at(b.probs()).0).abs() < 1e-8);
        assert!((v + 137.0).abs() < 1e-8);
    }

    #[test]
    fn horizon_bound() {
        let h = truncation_horizon(0.9, 101.0, 0.01);
        assert!(0.9f64.powi(h as i32) * 1010.0 <= 0.01);
        assert!(0.9f64.powi(h as i32 - 1) * 1010.0 > 0.01);
    }

    #[test]
    fn zero_discount_simulation_is_the_reward() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let mut bld = m.to_builder();
        bld.discount = 0.0;
        let m0 = bld.build().unwrap();
        let jc = make_initial_named(&m0, &["open-left", "open-left"]).unwrap();
        let (mean, se) = monte_carlo_value(&m0, &jc, &Start::State(0), &[0, 0, 0], 1000, 5, 1).unwrap();
        assert_eq!(se, 0.0);
        assert_eq!(mean, -50.0);
    }

    #[test]
    fn grid_size() {
        assert_eq!(simplex_grid(2, 100).len(), 101);
        assert_eq!(simplex_grid(3, 4).len(), 15);
    }
}
