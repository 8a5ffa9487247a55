//! Stochastic finite-state controllers, the correlation device and exact
//! evaluation of the correlated joint controller.

mod eval;
mod io;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{check_distribution, DecPomdp, DIST_TOL};
use crate::scalar::Scalar;

pub use eval::{bellman_apply, evaluate, evaluate_with, value_at_belief, EvalOptions, ValueTable};
pub(crate) use eval::{joint_action_support, node_space};
pub use io::{deserialize_controller, export_dot, serialize_controller};

/// Parameters of one local node, conditioned on the device node.
#[derive(Debug, Clone, PartialEq)]
pub struct Node<T> {
    /// `ψ(a | q_c, q)`, laid out `[q_c][a]`.
    pub action: Vec<T>,
    /// `η(q' | q_c, q, a, o)` as sparse rows, laid out `[q_c][a][o]`.
    pub next: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> Node<T> {
    /// Deterministic node playing `action` and moving to `targets[o]`,
    /// identical for every device node and every action.
    pub fn deterministic(action: usize, targets: &[usize], num_actions: usize, device: usize) -> Self {
        let mut act = vec![T::zero(); device * num_actions];
        for qc in 0..device {
            act[qc * num_actions + action] = T::one();
        }
        let rows: Vec<Vec<(usize, T)>> = targets.iter().map(|&q| vec![(q, T::one())]).collect();
        let next = (0..device * num_actions).flat_map(|_| rows.iter().cloned()).collect();
        Self { action: act, next }
    }
}

/// Local controller of one agent: `P(a, q' | q_c, q, o)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalController<T> {
    num_actions: usize,
    num_observations: usize,
    device_size: usize,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> LocalController<T> {
    pub fn new(num_actions: usize, num_observations: usize, device_size: usize) -> Self {
        Self {
            num_actions,
            num_observations,
            device_size,
            nodes: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_observations(&self) -> usize {
        self.num_observations
    }

    pub fn device_size(&self) -> usize {
        self.device_size
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn node(&self, q: usize) -> &Node<T> {
        &self.nodes[q]
    }

    #[inline]
    pub fn action_row(&self, qc: usize, q: usize) -> &[T] {
        let na = self.num_actions;
        &self.nodes[q].action[qc * na..(qc + 1) * na]
    }

    #[inline]
    pub fn action_prob(&self, qc: usize, q: usize, a: usize) -> T {
        self.nodes[q].action[qc * self.num_actions + a]
    }

    #[inline]
    pub fn next(&self, qc: usize, q: usize, a: usize, o: usize) -> &[(usize, T)] {
        &self.nodes[q].next[(qc * self.num_actions + a) * self.num_observations + o]
    }

    pub fn push(&mut self, node: Node<T>) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn set_node(&mut self, q: usize, node: Node<T>) {
        self.nodes[q] = node;
    }

    /// Whether any row of any node other than `q` itself moves into `q`
    /// with positive probability under an action it takes.
    pub fn has_incoming(&self, q: usize) -> bool {
        let (na, no) = (self.num_actions, self.num_observations);
        self.nodes.iter().enumerate().any(|(p, node)| {
            p != q
                && (0..self.device_size * na).any(|k| {
                    node.action[k] > T::zero()
                        && node.next[k * no..(k + 1) * no]
                            .iter()
                            .any(|row| row.iter().any(|&(t, w)| t == q && w > T::zero()))
                })
        })
    }

    /// Deletes node `q`, rerouting every transition into it through
    /// `redirect` (a distribution over the other nodes, old numbering).
    /// Returns the map from old to new indices.
    pub fn remove_node(&mut self, q: usize, redirect: &[(usize, T)]) -> Vec<Option<usize>> {
        let n = self.nodes.len();
        let map: Vec<Option<usize>> = (0..n)
            .map(|p| match p.cmp(&q) {
                std::cmp::Ordering::Less => Some(p),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(p - 1),
            })
            .collect();
        self.nodes.remove(q);
        for node in &mut self.nodes {
            for row in &mut node.next {
                *row = reroute(row, q, redirect, &map);
            }
        }
        map
    }

    /// Keeps only the listed nodes (ascending, old indices). Transitions
    /// into dropped nodes follow `redirect[old]`, which must only mention
    /// kept nodes.
    pub fn retain_nodes(&mut self, keep: &[usize], redirect: &dyn Fn(usize) -> Vec<(usize, T)>) {
        let n = self.nodes.len();
        let mut map = vec![None; n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = Some(new);
        }
        let old_nodes = std::mem::take(&mut self.nodes);
        self.nodes = keep.iter().map(|&k| old_nodes[k].clone()).collect();
        for node in &mut self.nodes {
            for row in &mut node.next {
                let mut out: Vec<(usize, T)> = Vec::with_capacity(row.len());
                for &(t, w) in row.iter() {
                    match map[t] {
                        Some(nt) => add_entry(&mut out, nt, w),
                        None => {
                            for (r, x) in redirect(t) {
                                add_entry(&mut out, map[r].expect("redirect to a kept node"), w * x);
                            }
                        }
                    }
                }
                out.sort_by_key(|e| e.0);
                *row = out;
            }
        }
    }

    /// Drops the parameters conditioned on device node `qc`.
    pub(crate) fn remove_device_node(&mut self, qc: usize) {
        let (na, no) = (self.num_actions, self.num_observations);
        for node in &mut self.nodes {
            node.action.drain(qc * na..(qc + 1) * na);
            node.next.drain(qc * na * no..(qc + 1) * na * no);
        }
        self.device_size -= 1;
    }

    pub fn validate(&self) -> Result<()> {
        let (na, no, nc) = (self.num_actions, self.num_observations, self.device_size);
        if self.nodes.is_empty() {
            return Err(Error::Dimension("controller has no nodes".into()));
        }
        for (q, node) in self.nodes.iter().enumerate() {
            if node.action.len() != nc * na || node.next.len() != nc * na * no {
                return Err(Error::Dimension(format!("node {q} has wrong table sizes")));
            }
            for qc in 0..nc {
                check_distribution(&node.action[qc * na..(qc + 1) * na], DIST_TOL, "action", || {
                    format!("node {q}, device {qc}")
                })?;
            }
            for (k, row) in node.next.iter().enumerate() {
                if row.iter().any(|&(t, _)| t >= self.nodes.len()) {
                    return Err(Error::Dimension(format!("node {q} points past the controller")));
                }
                let probs: Vec<T> = row.iter().map(|e| e.1).collect();
                check_distribution(&probs, DIST_TOL, "node transition", || format!("node {q}, row {k}"))?;
            }
        }
        Ok(())
    }
}

fn add_entry<T: Scalar>(row: &mut Vec<(usize, T)>, t: usize, w: T) {
    if w == T::zero() {
        return;
    }
    match row.iter_mut().find(|e| e.0 == t) {
        Some(e) => e.1 += w,
        None => row.push((t, w)),
    }
}

fn reroute<T: Scalar>(row: &[(usize, T)], q: usize, redirect: &[(usize, T)], map: &[Option<usize>]) -> Vec<(usize, T)> {
    let mut out: Vec<(usize, T)> = Vec::with_capacity(row.len() + redirect.len());
    for &(t, w) in row {
        if t == q {
            for &(r, x) in redirect {
                add_entry(&mut out, map[r].expect("redirect avoids the removed node"), w * x);
            }
        } else {
            add_entry(&mut out, map[t].expect("mapped"), w);
        }
    }
    out.sort_by_key(|e| e.0);
    out
}

/// Correlation device `ψ_c(q_c' | q_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationDevice<T> {
    size: usize,
    /// `[q_c][q_c']`
    trans: Vec<T>,
}

impl<T: Scalar> CorrelationDevice<T> {
    /// The single self-looping node of an independent joint controller.
    pub fn trivial() -> Self {
        Self {
            size: 1,
            trans: vec![T::one()],
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let size = rows.len();
        if size == 0 || rows.iter().any(|r| r.len() != size) {
            return Err(Error::Dimension("device table must be square and non-empty".into()));
        }
        for (qc, r) in rows.iter().enumerate() {
            check_distribution(r, DIST_TOL, "device", || format!("q_c={qc}"))?;
        }
        Ok(Self {
            size,
            trans: rows.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn row(&self, qc: usize) -> &[T] {
        &self.trans[qc * self.size..(qc + 1) * self.size]
    }

    pub fn set_row(&mut self, qc: usize, row: &[T]) {
        let n = self.size;
        self.trans[qc * n..(qc + 1) * n].copy_from_slice(row);
    }

    pub fn has_incoming(&self, qc: usize) -> bool {
        (0..self.size).any(|p| p != qc && self.row(p)[qc] > T::zero())
    }

    pub(crate) fn remove_node(&mut self, qc: usize, redirect: &[(usize, T)]) {
        let n = self.size;
        let mut rows: Vec<Vec<T>> = (0..n).filter(|&p| p != qc).map(|p| self.row(p).to_vec()).collect();
        for row in &mut rows {
            let w = row[qc];
            for &(r, x) in redirect {
                row[r] += w * x;
            }
            row.remove(qc);
        }
        self.size = n - 1;
        self.trans = rows.concat();
    }
}

/// Local controllers for every agent plus the correlation device.
#[derive(Debug, Clone, PartialEq)]
pub struct JointController<T> {
    pub locals: Vec<LocalController<T>>,
    pub device: CorrelationDevice<T>,
}

impl<T: Scalar> JointController<T> {
    pub fn num_agents(&self) -> usize {
        self.locals.len()
    }

    /// Local controller sizes, agent order.
    pub fn sizes(&self) -> Vec<usize> {
        self.locals.iter().map(|l| l.num_nodes()).collect()
    }

    pub fn device_size(&self) -> usize {
        self.device.size()
    }

    /// Number of joint nodes including the device coordinate.
    pub fn joint_size(&self) -> usize {
        self.device.size() * self.locals.iter().map(|l| l.num_nodes()).product::<usize>()
    }

    /// Checks every distribution and the dimensions against `model`.
    pub fn validate(&self, model: &DecPomdp<T>) -> Result<()> {
        if self.locals.len() != model.num_agents() {
            return Err(Error::Dimension(format!(
                "controller has {} agents, model has {}",
                self.locals.len(),
                model.num_agents()
            )));
        }
        for (i, l) in self.locals.iter().enumerate() {
            if l.num_actions != model.num_actions(i) || l.num_observations != model.num_observations(i) {
                return Err(Error::Dimension(format!("agent {i}: action or observation count differs")));
            }
            if l.device_size != self.device.size() {
                return Err(Error::Dimension(format!("agent {i}: conditioned on the wrong device size")));
            }
            l.validate()?;
        }
        for qc in 0..self.device.size() {
            check_distribution(self.device.row(qc), DIST_TOL, "device", || format!("q_c={qc}"))?;
        }
        Ok(())
    }

    /// Removes device node `qc`, rerouting device transitions into it.
    pub(crate) fn remove_device_node(&mut self, qc: usize, redirect: &[(usize, T)]) {
        self.device.remove_node(qc, redirect);
        for l in &mut self.locals {
            l.remove_device_node(qc);
        }
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> JointController<U> {
        let c = |x: T| U::c(x.f64());
        JointController {
            locals: self
                .locals
                .iter()
                .map(|l| LocalController {
                    num_actions: l.num_actions,
                    num_observations: l.num_observations,
                    device_size: l.device_size,
                    nodes: l
                        .nodes
                        .iter()
                        .map(|n| Node {
                            action: n.action.iter().map(|&x| c(x)).collect(),
                            next: n.next.iter().map(|r| r.iter().map(|&(t, w)| (t, c(w))).collect()).collect(),
                        })
                        .collect(),
                })
                .collect(),
            device: CorrelationDevice {
                size: self.device.size,
                trans: self.device.trans.iter().map(|&x| c(x)).collect(),
            },
        }
    }

    /// Largest absolute parameter difference, `None` if shapes differ.
    pub fn max_difference(&self, other: &Self) -> Option<f64> {
        if self.sizes() != other.sizes() || self.device.size != other.device.size {
            return None;
        }
        let mut m = 0.0f64;
        for (a, b) in self.device.trans.iter().zip(&other.device.trans) {
            m = m.max((a.f64() - b.f64()).abs());
        }
        for (la, lb) in self.locals.iter().zip(&other.locals) {
            if la.num_actions != lb.num_actions || la.num_observations != lb.num_observations {
                return None;
            }
            for (na, nb) in la.nodes.iter().zip(&lb.nodes) {
                for (x, y) in na.action.iter().zip(&nb.action) {
                    m = m.max((x.f64() - y.f64()).abs());
                }
                for (ra, rb) in na.next.iter().zip(&nb.next) {
                    let dense = |r: &[(usize, T)]| {
                        let mut d = vec![0.0; la.nodes.len()];
                        for &(t, w) in r {
                            d[t] += w.f64();
                        }
                        d
                    };
                    for (x, y) in dense(ra).iter().zip(dense(rb)) {
                        m = m.max((x - y).abs());
                    }
                }
            }
        }
        Some(m)
    }
}

/// One deterministic self-looping node per agent playing `first_actions[i]`,
/// with a trivial device.
pub fn make_initial<T: Scalar>(model: &DecPomdp<T>, first_actions: &[usize]) -> Result<JointController<T>> {
    if first_actions.len() != model.num_agents() {
        return Err(Error::Dimension(format!(
            "need {} initial actions, got {}",
            model.num_agents(),
            first_actions.len()
        )));
    }
    let mut locals = Vec::with_capacity(first_actions.len());
    for (i, &a) in first_actions.iter().enumerate() {
        if a >= model.num_actions(i) {
            return Err(Error::InvalidParameter(format!("action {a} out of range for agent {i}")));
        }
        let mut l = LocalController::new(model.num_actions(i), model.num_observations(i), 1);
        l.push(Node::deterministic(a, &vec![0; model.num_observations(i)], model.num_actions(i), 1));
        locals.push(l);
    }
    Ok(JointController {
        locals,
        device: CorrelationDevice::trivial(),
    })
}

/// Like [`make_initial`] with actions given by label.
pub fn make_initial_named<T: Scalar>(model: &DecPomdp<T>, names: &[&str]) -> Result<JointController<T>> {
    let mut acts = Vec::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if i >= model.num_agents() {
            break;
        }
        acts.push(
            model
                .action_index(i, n)
                .ok_or_else(|| Error::InvalidParameter(format!("agent {i} has no action `{n}`")))?,
        );
    }
    make_initial(model, &acts)
}

/// Random controller whose nodes pick one action and one successor per
/// observation uniformly at random; the device, if larger than one node,
/// gets uniformly random deterministic successors too.
pub fn random_deterministic<T: Scalar, R: Rng>(
    model: &DecPomdp<T>,
    sizes: &[usize],
    device: usize,
    rng: &mut R,
) -> JointController<T> {
    let device_rows = (0..device)
        .map(|_| {
            let mut r = vec![T::zero(); device];
            r[rng.gen_range(0..device)] = T::one();
            r
        })
        .collect();
    let locals = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let (na, no) = (model.num_actions(i), model.num_observations(i));
            let mut l = LocalController::new(na, no, device);
            for _ in 0..n {
                let mut node = Node {
                    action: vec![T::zero(); device * na],
                    next: Vec::with_capacity(device * na * no),
                };
                for qc in 0..device {
                    node.action[qc * na + rng.gen_range(0..na)] = T::one();
                    for _ in 0..na * no {
                        node.next.push(vec![(rng.gen_range(0..n), T::one())]);
                    }
                }
                l.push(node);
            }
            l
        })
        .collect();
    JointController {
        locals,
        device: CorrelationDevice::from_rows(device_rows).expect("deterministic rows"),
    }
}

fn random_row<T: Scalar, R: Rng>(rng: &mut R, n: usize) -> Vec<T> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| T::c(x / z)).collect()
}

/// Controller with every distribution drawn uniformly from its simplex.
pub fn random_stochastic<T: Scalar, R: Rng>(
    model: &DecPomdp<T>,
    sizes: &[usize],
    device: usize,
    rng: &mut R,
) -> JointController<T> {
    let device_rows = (0..device).map(|_| random_row(rng, device)).collect();
    let locals = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let (na, no) = (model.num_actions(i), model.num_observations(i));
            let mut l = LocalController::new(na, no, device);
            for _ in 0..n {
                let mut node = Node {
                    action: Vec::with_capacity(device * na),
                    next: Vec::with_capacity(device * na * no),
                };
                for _ in 0..device {
                    node.action.extend(random_row::<T, R>(rng, na));
                    for _ in 0..na * no {
                        node.next.push(random_row::<T, R>(rng, n).into_iter().enumerate().collect());
                    }
                }
                l.push(node);
            }
            l
        })
        .collect();
    let mut jc = JointController {
        locals,
        device: CorrelationDevice::from_rows(device_rows).expect("random rows"),
    };
    normalize(&mut jc);
    jc
}

/// Renormalizes every row exactly after arithmetic drift.
pub(crate) fn normalize<T: Scalar>(jc: &mut JointController<T>) {
    for l in &mut jc.locals {
        let na = l.num_actions;
        for node in &mut l.nodes {
            for chunk in node.action.chunks_mut(na) {
                let z: T = chunk.iter().copied().sum();
                chunk.iter_mut().for_each(|x| *x /= z);
            }
            for row in &mut node.next {
                let z: T = row.iter().map(|e| e.1).sum();
                row.iter_mut().for_each(|e| e.1 /= z);
            }
        }
    }
    let n = jc.device.size;
    for chunk in jc.device.trans.chunks_mut(n) {
        let z: T = chunk.iter().copied().sum();
        chunk.iter_mut().for_each(|x| *x /= z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::domains::builtin_domain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn initial_controller_shape() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let jc = make_initial(&m, &[1, 1]).unwrap();
        assert_eq!(jc.sizes(), vec![1, 1]);
        assert_eq!(jc.device_size(), 1);
        jc.validate(&m).unwrap();
        assert!(make_initial(&m, &[3, 0]).is_err());
    }

    #[test]
    fn remove_node_redirects_mass() {
        let mut l = LocalController::<f64>::new(1, 1, 1);
        l.push(Node::deterministic(0, &[1], 1, 1));
        l.push(Node::deterministic(0, &[2], 1, 1));
        l.push(Node::deterministic(0, &[2], 1, 1));
        assert!(l.has_incoming(1));
        l.remove_node(1, &[(0, 0.25), (2, 0.75)]);
        assert_eq!(l.num_nodes(), 2);
        assert_eq!(l.next(0, 0, 0, 0), &[(0, 0.25), (1, 0.75)]);
        assert_eq!(l.next(0, 1, 0, 0), &[(1, 1.0)]);
        l.validate().unwrap();
    }

    #[test]
    fn random_controllers_validate() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        random_stochastic(&m, &[3, 2], 2, &mut rng).validate(&m).unwrap();
        random_deterministic(&m, &[4, 1], 3, &mut rng).validate(&m).unwrap();
    }

    #[test]
    fn device_removal_shrinks_locals() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut jc = random_stochastic(&m, &[2, 2], 3, &mut rng);
        jc.remove_device_node(1, &[(0, 0.5), (2, 0.5)]);
        assert_eq!(jc.device_size(), 2);
        jc.validate(&m).unwrap();
    }
}
