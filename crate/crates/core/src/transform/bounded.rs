//! Bounded backups: one node's parameters are re-optimized by an LP so
//! that its value improves by the largest uniform amount `ε` against the
//! frozen values of every other node.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_fresh, NodeRef, TransformOptions};
use crate::controller::{
    evaluate_with, joint_action_support, random_deterministic, JointController, Node, ValueTable,
};
use crate::error::{Error, Result};
use crate::joint::JointSpace;
use crate::lp::{Constraint, LinearProgram, LpSolution, Sense};
use crate::model::DecPomdp;
use crate::scalar::Scalar;

/// LP solution of a bounded backup.
#[derive(Debug, Clone)]
pub struct BackupWitness<T> {
    pub target: NodeRef,
    pub epsilon: T,
    /// Summed improvement over all constraint rows of the installed
    /// solution (zero unless the secondary objective was used).
    pub gain: T,
    /// `x(q_c, a)`, laid out `[q_c][a]` (local backups only).
    pub action: Vec<T>,
    /// `x(q_c, a, o, q')`, laid out `[q_c][a][o][q']` (local backups only).
    pub next: Vec<T>,
    /// `x(q_c')` (device backups only).
    pub device: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BackupOutcome<T> {
    pub controller: JointController<T>,
    pub values: ValueTable<T>,
    pub witness: BackupWitness<T>,
    /// Whether the new parameters replaced the old ones.
    pub installed: bool,
}

/// Calls `f(local joint offset, probability)` for the joint successor of
/// every agent except `skip` (pass `usize::MAX` to include everyone).
fn local_successors<T: Scalar>(
    jc: &JointController<T>,
    space: &JointSpace,
    coords: &[usize],
    acts: &[usize],
    obs: &[usize],
    skip: usize,
    f: &mut impl FnMut(usize, T),
) {
    fn rec<T: Scalar>(
        jc: &JointController<T>,
        space: &JointSpace,
        coords: &[usize],
        acts: &[usize],
        obs: &[usize],
        skip: usize,
        i: usize,
        idx: usize,
        w: T,
        f: &mut impl FnMut(usize, T),
    ) {
        if i == jc.locals.len() {
            f(idx, w);
            return;
        }
        if i == skip {
            rec(jc, space, coords, acts, obs, skip, i + 1, idx, w, f);
            return;
        }
        let stride = space.stride(i + 1);
        for &(q, p) in jc.locals[i].next(coords[0], coords[i + 1], acts[i], obs[i]) {
            if p > T::zero() {
                rec(jc, space, coords, acts, obs, skip, i + 1, idx + q * stride, w * p, f);
            }
        }
    }
    rec(jc, space, coords, acts, obs, skip, 0, 0, T::one(), f);
}

/// Joint actions of every agent except `agent` with their probabilities;
/// the entry for `agent` is left at zero.
fn others_actions<T: Scalar>(jc: &JointController<T>, coords: &[usize], agent: usize) -> Vec<(Vec<usize>, T)> {
    let n = jc.num_agents();
    let mut out = vec![(vec![0; n], T::one())];
    for (j, l) in jc.locals.iter().enumerate() {
        if j == agent {
            continue;
        }
        let row = l.action_row(coords[0], coords[j + 1]);
        let mut next = Vec::with_capacity(out.len() * row.len());
        for (acts, p) in &out {
            for (a, &pa) in row.iter().enumerate() {
                if pa > T::zero() {
                    let mut v = acts.clone();
                    v[j] = a;
                    next.push((v, *p * pa));
                }
            }
        }
        out = next;
    }
    out
}

fn clean_row<T: Scalar>(row: &mut Vec<(usize, T)>) {
    let cut = T::tol(1e-13);
    row.retain(|e| e.1 > cut);
    let z: T = row.iter().map(|e| e.1).sum();
    row.iter_mut().for_each(|e| e.1 /= z);
}

/// Solves the bounded-backup program given by the probability rows `lp` and
/// the improvement rows `cuts`. When the best uniform improvement `ε` is
/// not positive and `opts.secondary` is set, a second program keeps every
/// row at its current value and maximizes the summed improvement.
/// Returns the solution, `ε` and that summed improvement.
fn solve_backup<T: Scalar>(
    lp: &LinearProgram<T>,
    cuts: &[Constraint<T>],
    kind: &str,
    opts: &TransformOptions,
) -> Result<(LpSolution<T>, T, T)> {
    if let Some(d) = &opts.dump {
        let mut full = lp.clone();
        full.constraints.extend_from_slice(cuts);
        d.write(kind, &full);
    }
    let sol = lp.solve_with_cuts(cuts, &opts.lp)?;
    let eps = sol.x[0];
    if eps > T::tol(opts.improve_tol) || !opts.secondary {
        return Ok((sol, eps, T::zero()));
    }
    let mut second = lp.clone();
    second.objective = vec![T::zero(); lp.num_vars()];
    for c in cuts {
        for &(v, a) in &c.coeffs {
            if v != 0 {
                second.objective[v] -= a;
            }
        }
    }
    second.add(vec![(0, T::one())], Sense::Eq, T::zero());
    if let Some(d) = &opts.dump {
        let mut full = second.clone();
        full.constraints.extend_from_slice(cuts);
        d.write(&format!("{kind}-secondary"), &full);
    }
    let sol2 = second.solve_with_cuts(cuts, &opts.lp)?;
    let mut gain = T::zero();
    for c in cuts {
        let lhs: T = c.coeffs.iter().filter(|e| e.0 != 0).map(|&(v, a)| a * sol2.x[v]).sum();
        gain += (c.rhs - lhs).max(T::zero());
    }
    Ok((sol2, eps, gain))
}

fn improves<T: Scalar>(eps: T, gain: T, opts: &TransformOptions) -> bool {
    eps > T::tol(opts.improve_tol) || gain > T::tol(opts.secondary_tol)
}

/// Bounded backup of `agent`'s node `node` with default options.
pub fn bounded_backup_local<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    agent: usize,
    node: usize,
) -> Result<(JointController<T>, BackupWitness<T>)> {
    let out = bounded_backup_local_with(model, jc, vt, agent, node, &TransformOptions::default())?;
    Ok((out.controller, out.witness))
}

pub fn bounded_backup_local_with<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    agent: usize,
    node: usize,
    opts: &TransformOptions,
) -> Result<BackupOutcome<T>> {
    check_fresh(jc, vt)?;
    if agent >= jc.num_agents() || node >= jc.locals[agent].num_nodes() {
        return Err(Error::InvalidParameter(format!("no node {node} for agent {agent}")));
    }
    let space = vt.space().clone();
    let ns = model.num_states();
    let beta = model.discount();
    let l = &jc.locals[agent];
    let (nc, na, no, nq) = (jc.device_size(), l.num_actions(), l.num_observations(), l.num_nodes());
    let k = agent + 1;
    let stride_k = space.stride(k);
    let slice = space.stride(0);
    let values = vt.values();

    // device-averaged continuation values U[q_c][local joint][s']
    let mut u = vec![T::zero(); nc * slice * ns];
    for qc in 0..nc {
        for (qc2, &p) in jc.device.row(qc).iter().enumerate() {
            if p > T::zero() {
                let src = &values[qc2 * slice * ns..(qc2 + 1) * slice * ns];
                let dst = &mut u[qc * slice * ns..(qc + 1) * slice * ns];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += p * v;
                }
            }
        }
    }

    let xa = |qc: usize, a: usize| 1 + qc * na + a;
    let xn = |qc: usize, a: usize, o: usize, q2: usize| 1 + nc * na + ((qc * na + a) * no + o) * nq + q2;
    let nvars = 1 + nc * na + nc * na * no * nq;
    let mut lp = LinearProgram::<T>::new(nvars);
    lp.objective[0] = T::one();
    lp.free[0] = true;
    lp.names[0] = "eps".into();
    for qc in 0..nc {
        for a in 0..na {
            lp.names[xa(qc, a)] = format!("x_c{qc}_a{a}");
            for o in 0..no {
                for q2 in 0..nq {
                    lp.names[xn(qc, a, o, q2)] = format!("x_c{qc}_a{a}_o{o}_q{q2}");
                }
            }
        }
    }

    let jas = model.joint_actions();
    let jos = model.joint_observations();
    let mut buf = vec![T::zero(); nvars];
    let mut cuts = Vec::new();
    let mut coords = vec![0; space.dims()];
    for j in 0..space.size() {
        if space.component(j, k) != 0 {
            continue;
        }
        space.decode_into(j, &mut coords);
        let qc = coords[0];
        let others = others_actions(jc, &coords, agent);
        let target = j + node * stride_k;
        for s in 0..ns {
            buf.iter_mut().for_each(|x| *x = T::zero());
            for (acts0, pa) in &others {
                let mut acts = acts0.clone();
                for ai in 0..na {
                    acts[agent] = ai;
                    let ja = jas.encode(&acts);
                    buf[xa(qc, ai)] += *pa * model.reward(s, ja);
                    for &(s2, t) in model.transitions_from(ja, s) {
                        for &(jo, o) in model.observations_at(ja, s2) {
                            let obs = jos.decode(jo);
                            let oi = obs[agent];
                            let base = beta * *pa * t * o;
                            local_successors(jc, &space, &coords, &acts, &obs, agent, &mut |partial, w| {
                                let bw = base * w;
                                for q2 in 0..nq {
                                    let lj = partial + q2 * stride_k;
                                    buf[xn(qc, ai, oi, q2)] += bw * u[(qc * slice + lj) * ns + s2];
                                }
                            });
                        }
                    }
                }
            }
            let mut coeffs = vec![(0, T::one())];
            coeffs.extend(buf.iter().enumerate().skip(1).filter(|e| *e.1 != T::zero()).map(|(v, &c)| (v, -c)));
            cuts.push(Constraint {
                coeffs,
                sense: Sense::Le,
                rhs: -values[target * ns + s],
            });
        }
    }
    for qc in 0..nc {
        lp.add((0..na).map(|a| (xa(qc, a), T::one())).collect(), Sense::Eq, T::one());
        for a in 0..na {
            for o in 0..no {
                let mut c: Vec<(usize, T)> = (0..nq).map(|q2| (xn(qc, a, o, q2), T::one())).collect();
                c.push((xa(qc, a), -T::one()));
                lp.add(c, Sense::Eq, T::zero());
            }
        }
    }
    let (sol, eps, gain) = solve_backup(&lp, &cuts, "bounded-local", opts)?;
    let witness = BackupWitness {
        target: NodeRef::Agent { agent, node },
        epsilon: eps,
        gain,
        action: sol.x[1..1 + nc * na].to_vec(),
        next: sol.x[1 + nc * na..].to_vec(),
        device: Vec::new(),
    };
    if !improves(eps, gain, opts) {
        return Ok(BackupOutcome {
            controller: jc.clone(),
            values: vt.clone(),
            witness,
            installed: false,
        });
    }

    let old = l.node(node);
    let mut new = Node {
        action: vec![T::zero(); nc * na],
        next: Vec::with_capacity(nc * na * no),
    };
    let cut = T::tol(1e-12);
    for qc in 0..nc {
        let mut z = T::zero();
        for a in 0..na {
            let x = sol.x[xa(qc, a)].max(T::zero());
            let x = if x > cut { x } else { T::zero() };
            new.action[qc * na + a] = x;
            z += x;
        }
        for a in 0..na {
            new.action[qc * na + a] /= z;
        }
        for a in 0..na {
            let xq = sol.x[xa(qc, a)];
            for o in 0..no {
                let idx = (qc * na + a) * no + o;
                if xq > cut {
                    let mut row: Vec<(usize, T)> = (0..nq)
                        .map(|q2| (q2, sol.x[xn(qc, a, o, q2)].max(T::zero()) / xq))
                        .collect();
                    clean_row(&mut row);
                    if row.is_empty() {
                        row = old.next[idx].clone();
                    }
                    new.next.push(row);
                } else {
                    new.next.push(old.next[idx].clone());
                }
            }
        }
    }
    let mut out = jc.clone();
    out.locals[agent].set_node(node, new);
    let values = evaluate_with(model, &out, &opts.eval, Some(vt.values()))?;
    Ok(BackupOutcome {
        controller: out,
        values,
        witness,
        installed: true,
    })
}

/// Bounded backup of device node `node` with default options.
pub fn bounded_backup_device<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    node: usize,
) -> Result<(JointController<T>, BackupWitness<T>)> {
    let out = bounded_backup_device_with(model, jc, vt, node, &TransformOptions::default())?;
    Ok((out.controller, out.witness))
}

pub fn bounded_backup_device_with<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    node: usize,
    opts: &TransformOptions,
) -> Result<BackupOutcome<T>> {
    check_fresh(jc, vt)?;
    let nc = jc.device_size();
    if node >= nc {
        return Err(Error::InvalidParameter(format!("no device node {node}")));
    }
    if nc == 1 {
        // the only distribution is the current one
        return Ok(BackupOutcome {
            controller: jc.clone(),
            values: vt.clone(),
            witness: BackupWitness {
                target: NodeRef::Device(node),
                epsilon: T::zero(),
                gain: T::zero(),
                action: Vec::new(),
                next: Vec::new(),
                device: vec![T::one()],
            },
            installed: false,
        });
    }
    let space = vt.space().clone();
    let ns = model.num_states();
    let beta = model.discount();
    let slice = space.stride(0);
    let values = vt.values();
    let jos = model.joint_observations();

    let mut lp = LinearProgram::<T>::new(1 + nc);
    lp.objective[0] = T::one();
    lp.free[0] = true;
    lp.names[0] = "eps".into();
    for qc2 in 0..nc {
        lp.names[1 + qc2] = format!("x_c{qc2}");
    }
    let mut coords = vec![0; space.dims()];
    let mut coef = vec![T::zero(); nc];
    let mut cuts = Vec::new();
    for lj in 0..slice {
        let j = node * slice + lj;
        space.decode_into(j, &mut coords);
        let support = joint_action_support(model, jc, &coords);
        for s in 0..ns {
            coef.iter_mut().for_each(|x| *x = T::zero());
            let mut immediate = T::zero();
            for &(ja, pa) in &support {
                let acts = model.joint_actions().decode(ja);
                immediate += pa * model.reward(s, ja);
                for &(s2, t) in model.transitions_from(ja, s) {
                    for &(jo, o) in model.observations_at(ja, s2) {
                        let obs = jos.decode(jo);
                        let base = beta * pa * t * o;
                        local_successors(jc, &space, &coords, &acts, &obs, usize::MAX, &mut |succ, w| {
                            for (qc2, c) in coef.iter_mut().enumerate() {
                                *c += base * w * values[(qc2 * slice + succ) * ns + s2];
                            }
                        });
                    }
                }
            }
            let mut coeffs = vec![(0, T::one())];
            coeffs.extend(coef.iter().enumerate().map(|(qc2, &c)| (1 + qc2, -c)));
            cuts.push(Constraint {
                coeffs,
                sense: Sense::Le,
                rhs: immediate - values[j * ns + s],
            });
        }
    }
    lp.add((1..=nc).map(|v| (v, T::one())).collect(), Sense::Eq, T::one());
    let (sol, eps, gain) = solve_backup(&lp, &cuts, "bounded-device", opts)?;
    let witness = BackupWitness {
        target: NodeRef::Device(node),
        epsilon: eps,
        gain,
        action: Vec::new(),
        next: Vec::new(),
        device: sol.x[1..].to_vec(),
    };
    if !improves(eps, gain, opts) {
        return Ok(BackupOutcome {
            controller: jc.clone(),
            values: vt.clone(),
            witness,
            installed: false,
        });
    }
    let cut = T::tol(1e-13);
    let mut row: Vec<T> = sol.x[1..].iter().map(|&x| if x > cut { x } else { T::zero() }).collect();
    let z: T = row.iter().copied().sum();
    row.iter_mut().for_each(|x| *x /= z);
    let mut out = jc.clone();
    out.device.set_row(node, &row);
    let values = evaluate_with(model, &out, &opts.eval, Some(vt.values()))?;
    Ok(BackupOutcome {
        controller: out,
        values,
        witness,
        installed: true,
    })
}

/// Result of repeated bounded backups.
#[derive(Debug, Clone)]
pub struct CycleOutcome<T> {
    pub controller: JointController<T>,
    pub values: ValueTable<T>,
    /// Backups performed.
    pub steps: usize,
    pub cycles: usize,
}

fn backup_at<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    target: NodeRef,
    opts: &TransformOptions,
) -> Result<BackupOutcome<T>> {
    match target {
        NodeRef::Device(q) => bounded_backup_device_with(model, jc, vt, q, opts),
        NodeRef::Agent { agent, node } => bounded_backup_local_with(model, jc, vt, agent, node, opts),
    }
}

/// Cycles bounded backups over the device and then every agent's nodes
/// until one full cycle improves by less than `opts.cycle_tol` in total.
pub fn bounded_cycle<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    vt: &ValueTable<T>,
    opts: &TransformOptions,
) -> Result<CycleOutcome<T>> {
    let mut jc = jc.clone();
    let mut vt = vt.clone();
    let mut steps = 0;
    let mut cycles = 0;
    while cycles < opts.max_cycles {
        cycles += 1;
        let mut total = T::zero();
        let mut targets: Vec<NodeRef> = (0..jc.device_size()).map(NodeRef::Device).collect();
        for (agent, l) in jc.locals.iter().enumerate() {
            targets.extend((0..l.num_nodes()).map(|node| NodeRef::Agent { agent, node }));
        }
        for t in targets {
            opts.check_deadline()?;
            let out = backup_at(model, &jc, &vt, t, opts)?;
            steps += 1;
            if out.installed {
                total += out.witness.epsilon.max(out.witness.gain);
            }
            jc = out.controller;
            vt = out.values;
        }
        if total < T::tol(opts.cycle_tol) {
            break;
        }
    }
    Ok(CycleOutcome {
        controller: jc,
        values: vt,
        steps,
        cycles,
    })
}

/// One trial run: a random deterministic controller of the given sizes,
/// then `steps` bounded backups on nodes drawn uniformly from the device
/// and all local controllers. Returns the final controller and `V(b₀)`
/// before the first and after every step.
pub fn bounded_pi_run<T: Scalar>(
    model: &DecPomdp<T>,
    sizes: &[usize],
    device: usize,
    steps: usize,
    seed: u64,
) -> Result<(JointController<T>, Vec<T>)> {
    bounded_pi_run_with(model, sizes, device, steps, seed, &TransformOptions::default())
}

/// [`bounded_pi_run`] with explicit transformation settings.
pub fn bounded_pi_run_with<T: Scalar>(
    model: &DecPomdp<T>,
    sizes: &[usize],
    device: usize,
    steps: usize,
    seed: u64,
    opts: &TransformOptions,
) -> Result<(JointController<T>, Vec<T>)> {
    if sizes.len() != model.num_agents() || sizes.contains(&0) || device == 0 {
        return Err(Error::InvalidParameter("every controller needs at least one node".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jc = random_deterministic(model, sizes, device, &mut rng);
    let mut vt = evaluate_with(model, &jc, &opts.eval, None)?;
    let b0 = model.initial_belief().to_vec();
    let mut trace = vec![vt.best_at(&b0).0];
    let total: usize = device + sizes.iter().sum::<usize>();
    for _ in 0..steps {
        let mut pick = rng.gen_range(0..total);
        let target = if pick < device {
            NodeRef::Device(pick)
        } else {
            pick -= device;
            let mut agent = 0;
            while pick >= sizes[agent] {
                pick -= sizes[agent];
                agent += 1;
            }
            NodeRef::Agent { agent, node: pick }
        };
        opts.check_deadline()?;
        let out = backup_at(model, &jc, &vt, target, opts)?;
        jc = out.controller;
        vt = out.values;
        trace.push(vt.best_at(&b0).0);
    }
    Ok((jc, trace))
}

/// Best of `restarts` trial runs; run seeds are drawn from `seed`.
/// Returns the best controller, its final `V(b₀)` and every run's final value.
pub fn bounded_pi_best<T: Scalar>(
    model: &DecPomdp<T>,
    sizes: &[usize],
    device: usize,
    steps: usize,
    restarts: usize,
    seed: u64,
) -> Result<(JointController<T>, T, Vec<T>)> {
    bounded_pi_best_with(model, sizes, device, steps, restarts, seed, &TransformOptions::default())
}

/// [`bounded_pi_best`] with explicit transformation settings.
pub fn bounded_pi_best_with<T: Scalar>(
    model: &DecPomdp<T>,
    sizes: &[usize],
    device: usize,
    steps: usize,
    restarts: usize,
    seed: u64,
    opts: &TransformOptions,
) -> Result<(JointController<T>, T, Vec<T>)> {
    if restarts == 0 {
        return Err(Error::InvalidParameter("need at least one run".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(JointController<T>, T)> = None;
    let mut finals = Vec::with_capacity(restarts);
    for _ in 0..restarts {
        let (jc, trace) = bounded_pi_run_with(model, sizes, device, steps, master.gen(), opts)?;
        let v = *trace.last().expect("trace has the initial value");
        finals.push(v);
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((jc, v));
        }
    }
    let (jc, v) = best.expect("at least one run");
    Ok((jc, v, finals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{evaluate, make_initial, random_stochastic};
    use crate::model::domains::builtin_domain;

    #[test]
    fn backups_weakly_improve_every_entry() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let jc = random_stochastic(&m, &[2, 3], 2, &mut rng);
        let vt = evaluate(&m, &jc).unwrap();
        let opts = TransformOptions::default();
        for t in [
            NodeRef::Device(1),
            NodeRef::Agent { agent: 0, node: 1 },
            NodeRef::Agent { agent: 1, node: 2 },
        ] {
            let out = backup_at(&m, &jc, &vt, t, &opts).unwrap();
            assert!(out.witness.epsilon >= -1e-9);
            for (new, old) in out.values.values().iter().zip(vt.values()) {
                assert!(*new >= old - 1e-7);
            }
        }
    }

    #[test]
    fn trivial_device_cannot_improve() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let jc = make_initial(&m, &[1, 1]).unwrap();
        let vt = evaluate(&m, &jc).unwrap();
        let (_, w) = bounded_backup_device(&m, &jc, &vt, 0).unwrap();
        assert!(w.epsilon.abs() < 1e-9);
    }

    #[test]
    fn zero_steps_returns_initial() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let (jc, trace) = bounded_pi_run(&m, &[2, 2], 1, 0, 5).unwrap();
        assert_eq!(trace.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(jc, random_deterministic(&m, &[2, 2], 1, &mut rng));
    }
}
