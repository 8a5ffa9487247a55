//! Value-preserving transformations: controller reductions (merge a node
//! into a dominating mixture of its peers) and bounded backups (re-optimize
//! one node's parameters against the frozen value function).

mod bounded;
mod dominance;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::controller::{evaluate_with, EvalOptions, JointController, ValueTable};
use crate::error::{Error, Result};
use crate::lp::{write_lp_format, LinearProgram, LpOptions};
use crate::model::DecPomdp;
use crate::scalar::Scalar;

pub use bounded::{
    bounded_backup_device, bounded_backup_device_with, bounded_backup_local, bounded_backup_local_with,
    bounded_cycle, bounded_pi_best, bounded_pi_best_with, bounded_pi_run, bounded_pi_run_with, BackupOutcome, BackupWitness, CycleOutcome,
};
pub(crate) use dominance::{dominance_search, TopTwo};

/// A node of the device or of one agent's local controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Device(usize),
    Agent { agent: usize, node: usize },
}

impl NodeRef {
    /// Coordinate of the controller in the joint node space.
    pub(crate) fn coordinate(&self) -> usize {
        match *self {
            NodeRef::Device(_) => 0,
            NodeRef::Agent { agent, .. } => agent + 1,
        }
    }

    pub(crate) fn node(&self) -> usize {
        match *self {
            NodeRef::Device(q) => q,
            NodeRef::Agent { node, .. } => node,
        }
    }

    pub(crate) fn at(coordinate: usize, node: usize) -> Self {
        if coordinate == 0 {
            NodeRef::Device(node)
        } else {
            NodeRef::Agent {
                agent: coordinate - 1,
                node,
            }
        }
    }
}

/// A dominating mixture for a node that can be removed.
#[derive(Debug, Clone)]
pub struct DominanceWitness<T> {
    pub target: NodeRef,
    /// Distribution over the other nodes of the same controller, indexed
    /// before the removal.
    pub distribution: Vec<(usize, T)>,
    pub epsilon: T,
}

/// Writes every LP built by the transformations into a directory, one
/// CPLEX-LP file per program.
#[derive(Debug, Clone)]
pub struct LpDump {
    dir: PathBuf,
    counter: Arc<AtomicUsize>,
}

impl LpDump {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            counter: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub(crate) fn write<T: Scalar>(&self, kind: &str, lp: &LinearProgram<T>) {
        let k = self.counter.fetch_add(1, Ordering::Relaxed);
        let name = format!("{kind}-{k:06}");
        let _ = std::fs::create_dir_all(&self.dir);
        let _ = std::fs::write(self.dir.join(format!("{name}.lp")), write_lp_format(lp, &name));
    }
}

/// Tolerances and limits shared by the transformations.
#[derive(Debug, Clone)]
pub struct TransformOptions {
    /// A node is removed when the dominance optimum is at least
    /// `-(slack + accept_tol)`.
    pub slack: f64,
    pub accept_tol: f64,
    /// Bounded-backup parameters are installed only when `ε*` exceeds this.
    pub improve_tol: f64,
    /// Whether a bounded backup whose best uniform improvement is zero
    /// falls back to maximizing the summed improvement.
    pub secondary: bool,
    /// Summed improvement needed to install such a solution.
    pub secondary_tol: f64,
    /// A bounded-backup cycle whose total `ε*` falls below this ends the
    /// search for a local optimum.
    pub cycle_tol: f64,
    pub max_cycles: usize,
    pub eval: EvalOptions,
    pub lp: LpOptions,
    pub dump: Option<LpDump>,
    /// Sweeps stop with [`Error::WallClock`] once this instant has passed.
    pub deadline: Option<Instant>,
}

impl TransformOptions {
    pub(crate) fn check_deadline(&self) -> Result<()> {
        match self.deadline {
            Some(d) if Instant::now() >= d => Err(Error::WallClock),
            _ => Ok(()),
        }
    }
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self {
            slack: 0.0,
            accept_tol: 1e-9,
            improve_tol: 1e-10,
            secondary: true,
            secondary_tol: 1e-8,
            cycle_tol: 1e-7,
            max_cycles: 500,
            eval: EvalOptions::default(),
            lp: LpOptions::default(),
            dump: None,
            deadline: None,
        }
    }
}

/// Row layout of the dominance LP for one controller: the value of
/// candidate node `k` at row `r` is `values[offs[r] + k·stride]`.
pub(crate) struct RowLayout {
    pub offs: Vec<usize>,
    pub stride: usize,
    pub nodes: usize,
}

impl RowLayout {
    pub(crate) fn new<T: Scalar>(vt: &ValueTable<T>, coordinate: usize) -> Self {
        let space = vt.space();
        let ns = vt.num_states();
        let mut offs = Vec::with_capacity(vt.values().len() / space.radix(coordinate).max(1));
        for j in 0..space.size() {
            if space.component(j, coordinate) == 0 {
                offs.extend((0..ns).map(|s| j * ns + s));
            }
        }
        Self {
            offs,
            stride: space.stride(coordinate) * ns,
            nodes: space.radix(coordinate),
        }
    }
}

fn controller_size<T: Scalar>(jc: &JointController<T>, target: NodeRef) -> Result<usize> {
    match target {
        NodeRef::Device(_) => Ok(jc.device_size()),
        NodeRef::Agent { agent, .. } => jc
            .locals
            .get(agent)
            .map(|l| l.num_nodes())
            .ok_or_else(|| Error::InvalidParameter(format!("no agent {agent}"))),
    }
}

fn check_fresh<T: Scalar>(jc: &JointController<T>, vt: &ValueTable<T>) -> Result<()> {
    let mut radices = vec![jc.device_size()];
    radices.extend(jc.sizes());
    if vt.space().radices() != radices.as_slice() {
        return Err(Error::Dimension("value table does not match the controller".into()));
    }
    Ok(())
}

/// Searches for a dominating mixture for `target`.
pub(crate) fn find_dominating<T: Scalar>(
    vt: &ValueTable<T>,
    target: NodeRef,
    opts: &TransformOptions,
    cache: Option<(&RowLayout, &TopTwo<T>)>,
) -> Result<Option<DominanceWitness<T>>> {
    let k = target.coordinate();
    let owned;
    let (layout, top) = match cache {
        Some(c) => c,
        None => {
            let layout = RowLayout::new(vt, k);
            let v = vt.values();
            let m = |r: usize, n: usize| v[layout.offs[r] + n * layout.stride];
            let top = TopTwo::compute(layout.offs.len(), layout.nodes, &m);
            owned = (layout, top);
            (&owned.0, &owned.1)
        }
    };
    let v = vt.values();
    let m = |r: usize, n: usize| v[layout.offs[r] + n * layout.stride];
    let threshold = T::c(opts.slack) + T::tol(opts.accept_tol);
    let found = dominance_search(
        layout.offs.len(),
        layout.nodes,
        target.node(),
        &m,
        top,
        threshold,
        &opts.lp,
        opts.dump.as_ref(),
    )?;
    Ok(found.map(|d| DominanceWitness {
        target,
        distribution: d.distribution,
        epsilon: d.epsilon,
    }))
}

/// Removes the witnessed node, redirects its incoming links through the
/// mixture and brings the value table up to date.
pub fn apply_reduction<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    w: &DominanceWitness<T>,
    opts: &TransformOptions,
) -> Result<(JointController<T>, ValueTable<T>)> {
    let mut out = jc.clone();
    let k = w.target.coordinate();
    let q = w.target.node();
    let linked = match w.target {
        NodeRef::Device(qc) => {
            let l = jc.device.has_incoming(qc);
            out.remove_device_node(qc, &w.distribution);
            l
        }
        NodeRef::Agent { agent, node } => {
            let l = jc.locals[agent].has_incoming(node);
            out.locals[agent].remove_node(node, &w.distribution);
            l
        }
    };
    let keep: Vec<Vec<usize>> = vt
        .space()
        .radices()
        .iter()
        .enumerate()
        .map(|(c, &n)| (0..n).filter(|&x| c != k || x != q).collect())
        .collect();
    let restricted = vt.select(&keep);
    let values = if linked {
        evaluate_with(model, &out, &opts.eval, Some(restricted.values()))?
    } else {
        restricted
    };
    Ok((out, values))
}

fn reduce_node<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    target: NodeRef,
    slack: f64,
) -> Result<Option<(JointController<T>, DominanceWitness<T>)>> {
    check_fresh(jc, vt)?;
    let n = controller_size(jc, target)?;
    if n < 2 {
        return Err(Error::Precondition("a reduction needs at least two nodes".into()));
    }
    if target.node() >= n {
        return Err(Error::InvalidParameter(format!("node {} out of range", target.node())));
    }
    let opts = TransformOptions {
        slack,
        ..TransformOptions::default()
    };
    match find_dominating(vt, target, &opts, None)? {
        Some(w) => {
            let (jc2, _) = apply_reduction(model, jc, vt, &w, &opts)?;
            Ok(Some((jc2, w)))
        }
        None => Ok(None),
    }
}

/// Tries to remove node `node` of `agent`'s controller (slack 0 is the
/// exact transformation).
pub fn reduce_local_node<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    agent: usize,
    node: usize,
    slack: f64,
) -> Result<Option<(JointController<T>, DominanceWitness<T>)>> {
    reduce_node(model, jc, vt, NodeRef::Agent { agent, node }, slack)
}

/// Tries to remove device node `node`.
pub fn reduce_device_node<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    node: usize,
    slack: f64,
) -> Result<Option<(JointController<T>, DominanceWitness<T>)>> {
    reduce_node(model, jc, vt, NodeRef::Device(node), slack)
}

/// Result of a reduction sweep.
#[derive(Debug, Clone)]
pub struct ReduceOutcome<T> {
    pub controller: JointController<T>,
    pub values: ValueTable<T>,
    /// Removed nodes per controller, device first.
    pub removals: Vec<usize>,
    pub witnesses: Vec<DominanceWitness<T>>,
}

impl<T> ReduceOutcome<T> {
    pub fn total_removals(&self) -> usize {
        self.removals.iter().sum()
    }
}

/// Reduces until no single node of any controller can be removed.
pub fn reduce_all<T: Scalar>(model: &DecPomdp<T>, jc: &JointController<T>, slack: f64) -> Result<ReduceOutcome<T>> {
    let opts = TransformOptions {
        slack,
        ..TransformOptions::default()
    };
    let vt = evaluate_with(model, jc, &opts.eval, None)?;
    reduce_all_with(model, jc, &vt, &opts)
}

/// [`reduce_all`] starting from an up-to-date value table. The sweep visits
/// the device and then every agent, nodes in ascending order, and repeats
/// until a full pass removes nothing.
pub fn reduce_all_with<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    opts: &TransformOptions,
) -> Result<ReduceOutcome<T>> {
    check_fresh(jc, vt)?;
    let mut jc = jc.clone();
    let mut vt = vt.clone();
    let dims = vt.space().dims();
    let mut removals = vec![0; dims];
    let mut witnesses = Vec::new();
    loop {
        let mut changed = false;
        for k in 0..dims {
            let mut q = 0;
            let mut cache: Option<(RowLayout, TopTwo<T>)> = None;
            while vt.space().radix(k) >= 2 && q < vt.space().radix(k) {
                if cache.is_none() {
                    let layout = RowLayout::new(&vt, k);
                    let v = vt.values();
                    let m = |r: usize, n: usize| v[layout.offs[r] + n * layout.stride];
                    let top = TopTwo::compute(layout.offs.len(), layout.nodes, &m);
                    cache = Some((layout, top));
                }
                opts.check_deadline()?;
                let (layout, top) = cache.as_ref().expect("filled above");
                match find_dominating(&vt, NodeRef::at(k, q), opts, Some((layout, top)))? {
                    Some(w) => {
                        let (jc2, vt2) = apply_reduction(model, &jc, &vt, &w, opts)?;
                        jc = jc2;
                        vt = vt2;
                        removals[k] += 1;
                        witnesses.push(w);
                        cache = None;
                        changed = true;
                    }
                    None => q += 1,
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(ReduceOutcome {
        controller: jc,
        values: vt,
        removals,
        witnesses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{evaluate, make_initial, random_stochastic, Node};
    use crate::model::domains::builtin_domain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiger() -> DecPomdp<f64> {
        builtin_domain("dec-tiger", &[]).unwrap()
    }

    #[test]
    fn duplicate_local_node_is_removed() {
        let m = tiger();
        let mut jc = make_initial(&m, &[0, 0]).unwrap();
        jc.locals[0].push(Node::deterministic(0, &[0, 0], 3, 1));
        let vt = evaluate(&m, &jc).unwrap();
        let (jc2, w) = reduce_local_node(&m, &jc, &vt, 0, 1, 0.0).unwrap().unwrap();
        assert_eq!(jc2.sizes(), vec![1, 1]);
        assert!(w.epsilon.abs() < 1e-9);
        assert_eq!(w.distribution, vec![(0, 1.0)]);
    }

    #[test]
    fn device_precondition() {
        let m = tiger();
        let jc = make_initial(&m, &[0, 0]).unwrap();
        let vt = evaluate(&m, &jc).unwrap();
        assert!(matches!(
            reduce_device_node(&m, &jc, &vt, 0, 0.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn sweep_on_minimal_controller_is_identity() {
        let m = tiger();
        let jc = make_initial(&m, &[1, 1]).unwrap();
        let out = reduce_all(&m, &jc, 0.0).unwrap();
        assert_eq!(out.total_removals(), 0);
        assert_eq!(out.controller, jc);
    }

    #[test]
    fn reductions_never_lower_values() {
        let m = tiger();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let jc = random_stochastic(&m, &[4, 4], 2, &mut rng);
        let vt = evaluate(&m, &jc).unwrap();
        let out = reduce_all_with(&m, &jc, &vt, &TransformOptions::default()).unwrap();
        let b = m.initial_belief();
        assert!(out.values.best_at(b).0 >= vt.best_at(b).0 - 1e-7);
    }
}
