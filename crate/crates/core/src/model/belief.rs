use super::{check_distribution, DecPomdp, DIST_TOL};
use crate::error::{Error, Result};
use crate::joint::JointSpace;
use crate::scalar::Scalar;

/// A probability distribution over system states.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState<T>(Vec<T>);

impl<T: Scalar> BeliefState<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        check_distribution(&probs, DIST_TOL, "belief", || "b".into())?;
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![T::one() / T::c(n as f64); n])
    }

    pub fn point(n: usize, s: usize) -> Self {
        let mut v = vec![T::zero(); n];
        v[s] = T::one();
        Self(v)
    }

    pub fn probs(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_distance(&self, other: &Self) -> T {
        self.0.iter().zip(&other.0).map(|(&a, &b)| (a - b).abs()).sum()
    }

    pub fn linf_distance(&self, other: &Self) -> T {
        self.0
            .iter()
            .zip(&other.0)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// State-conditioned action distribution of every agent except `agent`:
/// `P(a_{-i} | s)` indexed by the joint action of the other agents
/// (ascending agent order, first agent most significant).
#[derive(Debug, Clone)]
pub struct FixedAgentPolicy<T> {
    agent: usize,
    others: JointSpace,
    /// `[s][a_{-i}]`
    probs: Vec<T>,
}

impl<T: Scalar> FixedAgentPolicy<T> {
    /// Product of per-agent policies `per_agent[j][s][a_j]`; the entry for
    /// `agent` itself is ignored.
    pub fn product(model: &DecPomdp<T>, agent: usize, per_agent: &[Vec<Vec<T>>]) -> Result<Self> {
        let n = model.num_agents();
        if per_agent.len() != n || agent >= n {
            return Err(Error::Dimension(format!(
                "need one policy per agent ({n}), got {}",
                per_agent.len()
            )));
        }
        let ns = model.num_states();
        let radices: Vec<usize> = (0..n).filter(|&j| j != agent).map(|j| model.num_actions(j)).collect();
        let others = JointSpace::new(radices);
        for (j, pol) in per_agent.iter().enumerate() {
            if j == agent {
                continue;
            }
            if pol.len() != ns {
                return Err(Error::Dimension(format!("policy of agent {j} needs {ns} state rows")));
            }
            for (s, row) in pol.iter().enumerate() {
                if row.len() != model.num_actions(j) {
                    return Err(Error::Dimension(format!("policy of agent {j}, state {s}: wrong action count")));
                }
                check_distribution(row, DIST_TOL, "policy", || format!("agent {j}, state {s}"))?;
            }
        }
        let mut probs = vec![T::zero(); ns * others.size()];
        let mut coords = vec![0; others.dims()];
        for s in 0..ns {
            for k in 0..others.size() {
                others.decode_into(k, &mut coords);
                let mut p = T::one();
                for (pos, j) in (0..n).filter(|&j| j != agent).enumerate() {
                    p *= per_agent[j][s][coords[pos]];
                }
                probs[s * others.size() + k] = p;
            }
        }
        Ok(Self { agent, others, probs })
    }

    /// Every other agent uses the same state-independent distribution per
    /// agent, `dists[j][a_j]`.
    pub fn state_independent(model: &DecPomdp<T>, agent: usize, dists: &[Vec<T>]) -> Result<Self> {
        let ns = model.num_states();
        let per_agent: Vec<Vec<Vec<T>>> = dists.iter().map(|d| vec![d.clone(); ns]).collect();
        Self::product(model, agent, &per_agent)
    }

    /// All other agents choose uniformly at random.
    pub fn uniform(model: &DecPomdp<T>, agent: usize) -> Self {
        let dists: Vec<Vec<T>> = (0..model.num_agents())
            .map(|j| {
                let k = model.num_actions(j);
                vec![T::one() / T::c(k as f64); k]
            })
            .collect();
        Self::state_independent(model, agent, &dists).expect("uniform policy is valid")
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn others(&self) -> &JointSpace {
        &self.others
    }

    #[inline]
    pub fn prob(&self, s: usize, others_action: usize) -> T {
        self.probs[s * self.others.size() + others_action]
    }
}

/// Joint action index from agent `i`'s action and the others' joint index.
fn compose_action<T: Scalar>(model: &DecPomdp<T>, agent: usize, a_i: usize, others: &JointSpace, k: usize) -> usize {
    let ja_space = model.joint_actions();
    ja_space.insert(others, k, agent, a_i)
}

/// Unnormalized `P(s', o_i | a_i, b)` for every `(o_i, s')`, laid out `[o_i][s']`.
fn joint_numerator<T: Scalar>(
    model: &DecPomdp<T>,
    b: &BeliefState<T>,
    agent: usize,
    a_i: usize,
    others: &FixedAgentPolicy<T>,
) -> Result<Vec<T>> {
    let ns = model.num_states();
    if b.len() != ns {
        return Err(Error::Dimension("belief length".into()));
    }
    if others.agent() != agent {
        return Err(Error::Precondition(format!(
            "policy describes the teammates of agent {}, not {agent}",
            others.agent()
        )));
    }
    if a_i >= model.num_actions(agent) {
        return Err(Error::InvalidParameter(format!("action {a_i} out of range")));
    }
    let no_i = model.num_observations(agent);
    let jo_space = model.joint_observations();
    let mut num = vec![T::zero(); no_i * ns];
    for s in 0..ns {
        let bs = b.probs()[s];
        if bs == T::zero() {
            continue;
        }
        for k in 0..others.others().size() {
            let p = others.prob(s, k);
            if p == T::zero() {
                continue;
            }
            let ja = compose_action(model, agent, a_i, others.others(), k);
            for &(s2, t) in model.transitions_from(ja, s) {
                let w = bs * p * t;
                for &(jo, o) in model.observations_at(ja, s2) {
                    let oi = jo_space.component(jo, agent);
                    num[oi * ns + s2] += w * o;
                }
            }
        }
    }
    Ok(num)
}

/// `P(o_i | a_i, b)` for every local observation of `agent`, assuming the
/// other agents act according to `others`.
pub fn observation_likelihood<T: Scalar>(
    model: &DecPomdp<T>,
    b: &BeliefState<T>,
    agent: usize,
    a_i: usize,
    others: &FixedAgentPolicy<T>,
) -> Result<Vec<T>> {
    let ns = model.num_states();
    let num = joint_numerator(model, b, agent, a_i, others)?;
    Ok(num.chunks(ns).map(|c| c.iter().copied().sum()).collect())
}

/// Bayes update of `b` after agent `agent` takes `a_i` and sees `o_i`,
/// with the teammates acting according to `others`.
pub fn belief_update<T: Scalar>(
    model: &DecPomdp<T>,
    b: &BeliefState<T>,
    agent: usize,
    a_i: usize,
    o_i: usize,
    others: &FixedAgentPolicy<T>,
) -> Result<BeliefState<T>> {
    let ns = model.num_states();
    if o_i >= model.num_observations(agent) {
        return Err(Error::InvalidParameter(format!("observation {o_i} out of range")));
    }
    let num = joint_numerator(model, b, agent, a_i, others)?;
    let row = &num[o_i * ns..(o_i + 1) * ns];
    let z: T = row.iter().copied().sum();
    if z <= T::zero() {
        return Err(Error::UnreachableObservation {
            agent,
            action: a_i,
            observation: o_i,
        });
    }
    Ok(BeliefState(row.iter().map(|&p| p / z).collect()))
}
