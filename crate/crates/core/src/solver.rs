//! Exhaustive backups and the policy-iteration driver.

use std::fmt::{self, Write};
use std::time::{Duration, Instant};

use num_bigint::BigUint;

use crate::controller::{bellman_apply, evaluate_with, node_space, JointController, Node, ValueTable};
use crate::error::{Error, Result};
use crate::model::DecPomdp;
use crate::scalar::Scalar;
use crate::transform::{bounded_cycle, reduce_all_with, TransformOptions};

/// Default per-agent node cap.
pub const DEFAULT_NODE_CAP: usize = 4000;
/// Default wall-clock budget.
pub const DEFAULT_WALL_CLOCK: Duration = Duration::from_secs(4 * 3600);

/// Number of nodes an exhaustive backup adds to a controller of `nodes`
/// nodes: `|A|·|Q|^{|Ω|}`.
pub fn backup_growth(actions: usize, nodes: usize, observations: usize) -> BigUint {
    BigUint::from(actions) * BigUint::from(nodes).pow(observations as u32)
}

fn backed_up_size(model_actions: usize, nodes: usize, observations: usize) -> Option<usize> {
    let mut added = model_actions;
    for _ in 0..observations {
        added = added.checked_mul(nodes)?;
    }
    nodes.checked_add(added)
}

fn check_capacity<T: Scalar>(model: &DecPomdp<T>, jc: &JointController<T>, cap: usize) -> Result<()> {
    for (i, l) in jc.locals.iter().enumerate() {
        let (na, no, n) = (model.num_actions(i), model.num_observations(i), l.num_nodes());
        match backed_up_size(na, n, no) {
            Some(size) if size <= cap => {}
            _ => {
                let size = BigUint::from(n) + backup_growth(na, n, no);
                return Err(Error::Capacity {
                    agent: i,
                    size: size.to_string(),
                    cap,
                });
            }
        }
    }
    Ok(())
}

/// Appends to every local controller one deterministic node per action and
/// per mapping from observations to existing nodes. New nodes are ordered
/// by action, then by mapping with observation 0 the most significant digit.
pub fn exhaustive_backup<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    cap: usize,
) -> Result<JointController<T>> {
    jc.validate(model)?;
    check_capacity(model, jc, cap)?;
    let nc = jc.device_size();
    let mut out = jc.clone();
    for (i, l) in out.locals.iter_mut().enumerate() {
        let (na, no, n) = (model.num_actions(i), model.num_observations(i), l.num_nodes());
        let mappings = n.pow(no as u32);
        let mut targets = vec![0; no];
        for a in 0..na {
            for m in 0..mappings {
                let mut rest = m;
                for o in (0..no).rev() {
                    targets[o] = rest % n;
                    rest /= n;
                }
                l.push(Node::deterministic(a, &targets, na, nc));
            }
        }
    }
    Ok(out)
}

/// Exhaustive backup together with the exact value table of the result.
///
/// New nodes only lead to old ones, so a single Bellman application to the
/// old table, embedded into the larger joint space, is already exact.
pub fn exhaustive_backup_with<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    cap: usize,
) -> Result<(JointController<T>, ValueTable<T>)> {
    let next = exhaustive_backup(model, jc, cap)?;
    if vt.space() != &node_space(jc) || vt.num_states() != model.num_states() {
        return Err(Error::Precondition("value table does not belong to the controller".into()));
    }
    let space = node_space(&next);
    let values = bellman_apply(model, &next, &vt.embed(&space));
    let vt = ValueTable::from_parts(space, model.num_states(), values, vt.residual());
    Ok((next, vt))
}

/// Smallest `t ≥ 0` with `β^{t+1} R_max / (1 − β) ≤ ε`.
pub fn termination_iterations(beta: f64, r_max: f64, epsilon: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("discount {beta} must lie in [0, 1)")));
    }
    if !(r_max >= 0.0) || !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("need r_max ≥ 0 and ε > 0".into()));
    }
    let mut t = 0;
    while bound_after(beta, r_max, t) > epsilon {
        t += 1;
    }
    Ok(t)
}

fn bound_after(beta: f64, r_max: f64, t: usize) -> f64 {
    if r_max == 0.0 {
        return 0.0;
    }
    beta.powi(t as i32 + 1) * r_max / (1.0 - beta)
}

/// Sizes of the controllers that pure exhaustive backups would produce,
/// `E_0 = |Q_i^0|` and `E_t = |A_i| E_{t−1}^{|Ω_i|}`, for `t = 0..=iterations`.
pub fn exhaustive_sizes<T: Scalar>(model: &DecPomdp<T>, initial: &[usize], iterations: usize) -> Vec<Vec<BigUint>> {
    let mut rows = vec![initial.iter().map(|&n| BigUint::from(n)).collect::<Vec<_>>()];
    for _ in 0..iterations {
        let prev = rows.last().expect("seeded");
        let next = prev
            .iter()
            .enumerate()
            .map(|(i, e)| BigUint::from(model.num_actions(i)) * e.pow(model.num_observations(i) as u32))
            .collect();
        rows.push(next);
    }
    rows
}

/// Why a driver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    EpsilonBound,
    Converged,
    Capacity,
    WallClock,
    IterationLimit,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::EpsilonBound => "epsilon-bound",
            Termination::Converged => "converged",
            Termination::Capacity => "capacity",
            Termination::WallClock => "wall-clock",
            Termination::IterationLimit => "iteration-limit",
        })
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    /// Local sizes right after the exhaustive backup (equal to `sizes` at t = 0).
    pub backed_up: Vec<usize>,
    /// Local sizes after the transformations.
    pub sizes: Vec<usize>,
    pub device_size: usize,
    /// Sizes under pure exhaustive backups.
    pub exhaustive: Vec<BigUint>,
    pub value_b0: f64,
    /// Seconds since the run started.
    pub seconds: f64,
    pub reductions: usize,
    pub bounded_steps: usize,
}

/// Per-iteration records of a policy-iteration run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationLog {
    pub records: Vec<IterationRecord>,
}

impl IterationLog {
    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.value_b0).collect()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn csv_header(agents: usize) -> String {
        let mut h = vec!["t".to_string()];
        h.extend((1..=agents).map(|i| format!("size_{i}")));
        h.push("device_size".into());
        h.extend((1..=agents).map(|i| format!("exhaustive_{i}")));
        h.extend(["value_b0", "seconds", "reductions", "bounded_steps"].map(String::from));
        h.join(",")
    }

    /// One CSV line; `deterministic` writes zero seconds so that repeated
    /// runs give identical files.
    pub fn csv_row(r: &IterationRecord, deterministic: bool) -> String {
        let mut line = r.t.to_string();
        for s in &r.sizes {
            let _ = write!(line, ",{s}");
        }
        let _ = write!(line, ",{}", r.device_size);
        for e in &r.exhaustive {
            let _ = write!(line, ",{e}");
        }
        let secs = if deterministic { 0.0 } else { r.seconds };
        let _ = write!(line, ",{:.10},{secs:.3},{},{}", r.value_b0, r.reductions, r.bounded_steps);
        line
    }

    pub fn to_csv(&self, agents: usize, deterministic: bool) -> String {
        let mut out = Self::csv_header(agents);
        out.push('\n');
        for r in &self.records {
            out.push_str(&Self::csv_row(r, deterministic));
            out.push('\n');
        }
        out
    }
}

/// Settings of [`policy_iteration`].
#[derive(Debug, Clone)]
pub struct PiOptions {
    pub use_bounded_updates: bool,
    /// Dominance slack accepted by reductions.
    pub vpt_slack: f64,
    pub node_cap: usize,
    pub wall_clock: Option<Duration>,
    pub max_iters: Option<usize>,
    pub transform: TransformOptions,
}

impl Default for PiOptions {
    fn default() -> Self {
        Self {
            use_bounded_updates: false,
            vpt_slack: 0.0,
            node_cap: DEFAULT_NODE_CAP,
            wall_clock: Some(DEFAULT_WALL_CLOCK),
            max_iters: None,
            transform: TransformOptions::default(),
        }
    }
}

/// Result of a driver run.
#[derive(Debug, Clone)]
pub struct PiOutcome<T> {
    pub controller: JointController<T>,
    pub values: ValueTable<T>,
    pub log: IterationLog,
    pub termination: Termination,
    /// Error text behind a capacity or wall-clock stop.
    pub note: Option<String>,
}

impl<T: Scalar> PiOutcome<T> {
    pub fn final_value(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.value_b0)
    }
}

/// Policy iteration: evaluate, back up exhaustively, reduce (and run
/// bounded backups when enabled) until the discount bound certifies `ε`.
pub fn policy_iteration<T: Scalar>(
    model: &DecPomdp<T>,
    jc0: &JointController<T>,
    epsilon: f64,
    opts: &PiOptions,
) -> Result<PiOutcome<T>> {
    policy_iteration_with(model, jc0, epsilon, opts, &mut |_, _| {})
}

/// [`policy_iteration`] calling `observer` after every logged iteration.
pub fn policy_iteration_with<T: Scalar>(
    model: &DecPomdp<T>,
    jc0: &JointController<T>,
    epsilon: f64,
    opts: &PiOptions,
    observer: &mut dyn FnMut(&IterationRecord, &JointController<T>),
) -> Result<PiOutcome<T>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("ε must be positive".into()));
    }
    jc0.validate(model)?;
    let start = Instant::now();
    let deadline = opts.wall_clock.map(|d| start + d);
    let topts = TransformOptions {
        slack: opts.vpt_slack,
        deadline,
        ..opts.transform.clone()
    };
    let beta = model.discount().f64();
    let r_max = model.r_max().f64();
    let b0 = model.initial_belief().to_vec();

    let mut jc = jc0.clone();
    let mut vt = evaluate_with(model, &jc, &topts.eval, None)?;
    let mut exhaustive: Vec<BigUint> = jc.sizes().into_iter().map(BigUint::from).collect();
    let mut log = IterationLog::default();
    let record = IterationRecord {
        t: 0,
        backed_up: jc.sizes(),
        sizes: jc.sizes(),
        device_size: jc.device_size(),
        exhaustive: exhaustive.clone(),
        value_b0: vt.best_at(&b0).0.f64(),
        seconds: start.elapsed().as_secs_f64(),
        reductions: 0,
        bounded_steps: 0,
    };
    observer(&record, &jc);
    log.records.push(record);

    let mut t = 0;
    let mut note = None;
    let termination = loop {
        if bound_after(beta, r_max, t) <= epsilon {
            break Termination::EpsilonBound;
        }
        if opts.max_iters.is_some_and(|m| t >= m) {
            break Termination::IterationLimit;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break Termination::WallClock;
        }
        let step = iterate(model, &jc, &vt, opts, &topts);
        let (next, next_vt, backed_up, reductions, bounded_steps) = match step {
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
        let unchanged = next.sizes() == jc.sizes()
            && next.device_size() == jc.device_size()
            && next.max_difference(&jc).is_some_and(|d| d <= 1e-9);
        jc = next;
        vt = next_vt;
        let record = IterationRecord {
            t,
            backed_up,
            sizes: jc.sizes(),
            device_size: jc.device_size(),
            exhaustive: exhaustive.clone(),
            value_b0: vt.best_at(&b0).0.f64(),
            seconds: start.elapsed().as_secs_f64(),
            reductions,
            bounded_steps,
        };
        observer(&record, &jc);
        log.records.push(record);
        if unchanged {
            break Termination::Converged;
        }
    };
    Ok(PiOutcome {
        controller: jc,
        values: vt,
        log,
        termination,
        note,
    })
}

type Step<T> = (JointController<T>, ValueTable<T>, Vec<usize>, usize, usize);

fn iterate<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    opts: &PiOptions,
    topts: &TransformOptions,
) -> Result<Step<T>> {
    let (backed, bvt) = exhaustive_backup_with(model, jc, vt, opts.node_cap)?;
    let backed_up = backed.sizes();
    let red = reduce_all_with(model, &backed, &bvt, topts)?;
    let reductions = red.total_removals();
    let (mut next, mut nvt) = (red.controller, red.values);
    let mut steps = 0;
    if opts.use_bounded_updates {
        let cyc = bounded_cycle(model, &next, &nvt, topts)?;
        steps = cyc.steps;
        next = cyc.controller;
        nvt = cyc.values;
    }
    Ok((next, nvt, backed_up, reductions, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{evaluate, make_initial};
    use crate::model::domains::builtin_domain;

    #[test]
    fn termination_bound_examples() {
        assert_eq!(termination_iterations(0.0, 50.0, 1e-3).unwrap(), 0);
        assert_eq!(termination_iterations(0.9, 20.0, 0.01).unwrap(), 93);
        assert_eq!(termination_iterations(0.9, 0.0, 0.01).unwrap(), 0);
        assert!(termination_iterations(1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn backup_adds_formula_count() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let jc = make_initial(&m, &[0, 0]).unwrap();
        let b = exhaustive_backup(&m, &jc, DEFAULT_NODE_CAP).unwrap();
        assert_eq!(b.sizes(), vec![4, 4]);
        let b2 = exhaustive_backup(&m, &b, DEFAULT_NODE_CAP).unwrap();
        assert_eq!(b2.sizes(), vec![4 + 48, 4 + 48]);
        assert!(matches!(exhaustive_backup(&m, &b2, 1000), Err(Error::Capacity { .. })));
    }

    #[test]
    fn embedded_values_are_exact() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let jc = make_initial(&m, &[1, 0]).unwrap();
        let vt = evaluate(&m, &jc).unwrap();
        let (b, bvt) = exhaustive_backup_with(&m, &jc, &vt, DEFAULT_NODE_CAP).unwrap();
        let direct = evaluate(&m, &b).unwrap();
        for (x, y) in bvt.values().iter().zip(direct.values()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn huge_epsilon_stops_at_once() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let jc = make_initial(&m, &[0, 0]).unwrap();
        let out = policy_iteration(&m, &jc, 1e6, &PiOptions::default()).unwrap();
        assert_eq!(out.termination, Termination::EpsilonBound);
        assert_eq!(out.log.records.len(), 1);
        assert_eq!(out.controller, jc);
    }

    #[test]
    fn exhaustive_columns() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let e = exhaustive_sizes(&m, &[1, 1], 3);
        let col: Vec<String> = e.iter().map(|r| r[0].to_string()).collect();
        assert_eq!(col, ["1", "3", "27", "2187"]);
    }
}
