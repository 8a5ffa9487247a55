use super::JointController;
use crate::error::{Error, Result};
use crate::joint::JointSpace;
use crate::linalg::solve_dense;
use crate::model::{BeliefState, DecPomdp};
use crate::scalar::Scalar;

/// Settings for [`evaluate_with`].
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Largest number of unknowns `|S|·|Q⃗|` solved by dense elimination.
    pub dense_limit: usize,
    /// Target max-norm residual of the fixed-point system.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            dense_limit: 1500,
            tolerance: 1e-10,
            max_sweeps: 1_000_000,
        }
    }
}

/// `V(s, q⃗)` for every state and joint node `q⃗ = (q_c, q_1, …, q_n)`.
///
/// Joint nodes are indexed in mixed radix with the device outermost; the
/// entry for `(s, j)` lives at `j·|S| + s`.
#[derive(Debug, Clone)]
pub struct ValueTable<T> {
    space: JointSpace,
    num_states: usize,
    values: Vec<T>,
    residual: T,
}

impl<T: Scalar> ValueTable<T> {
    pub(crate) fn from_parts(space: JointSpace, num_states: usize, values: Vec<T>, residual: T) -> Self {
        Self {
            space,
            num_states,
            values,
            residual,
        }
    }

    /// Joint node space with radices `[|Q_c|, |Q_1|, …, |Q_n|]`.
    pub fn space(&self) -> &JointSpace {
        &self.space
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_joint(&self) -> usize {
        self.space.size()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Max-norm residual of the evaluation system at these values.
    pub fn residual(&self) -> T {
        self.residual
    }

    #[inline]
    pub fn get(&self, s: usize, joint: usize) -> T {
        self.values[joint * self.num_states + s]
    }

    /// Values of joint node `joint` over all states.
    #[inline]
    pub fn column(&self, joint: usize) -> &[T] {
        &self.values[joint * self.num_states..(joint + 1) * self.num_states]
    }

    /// `Σ_s b(s) V(s, q⃗)`.
    pub fn belief_value(&self, b: &[T], joint: usize) -> T {
        self.column(joint).iter().zip(b).map(|(&v, &p)| v * p).sum()
    }

    /// Best joint node at `b` and its value; ties go to the lowest index.
    pub fn best_at(&self, b: &[T]) -> (T, usize) {
        let mut best = (self.belief_value(b, 0), 0);
        for j in 1..self.space.size() {
            let v = self.belief_value(b, j);
            let margin = T::resolution() * (T::one() + best.0.abs());
            if v > best.0 + margin {
                best = (v, j);
            }
        }
        best
    }

    /// Sub-table keeping only the listed device nodes (`keep[0]`) and local
    /// nodes (`keep[i + 1]`), all ascending.
    pub fn select(&self, keep: &[Vec<usize>]) -> Self {
        let space = JointSpace::new(keep.iter().map(Vec::len).collect());
        let ns = self.num_states;
        let mut values = vec![T::zero(); space.size() * ns];
        let mut coords = vec![0; space.dims()];
        let mut old = vec![0; space.dims()];
        for j in 0..space.size() {
            space.decode_into(j, &mut coords);
            for k in 0..coords.len() {
                old[k] = keep[k][coords[k]];
            }
            let oj = self.space.encode(&old);
            values[j * ns..(j + 1) * ns].copy_from_slice(self.column(oj));
        }
        Self {
            space,
            num_states: ns,
            values,
            residual: self.residual,
        }
    }

    /// Values laid out in `space`, a superset whose every radix is at least
    /// the current one; new joint nodes are zero.
    pub(crate) fn embed(&self, space: &JointSpace) -> Vec<T> {
        let ns = self.num_states;
        let mut out = vec![T::zero(); space.size() * ns];
        let mut coords = vec![0; self.space.dims()];
        for j in 0..self.space.size() {
            self.space.decode_into(j, &mut coords);
            let nj = space.encode(&coords);
            out[nj * ns..(nj + 1) * ns].copy_from_slice(self.column(j));
        }
        out
    }
}

/// `V(b) = max_q⃗ Σ_s b(s) V(s, q⃗)` with the maximizing joint node's
/// coordinates `(q_c, q_1, …, q_n)`.
pub fn value_at_belief<T: Scalar>(vt: &ValueTable<T>, b: &BeliefState<T>) -> Result<(T, Vec<usize>)> {
    if b.len() != vt.num_states() {
        return Err(Error::Dimension("belief length differs from the value table".into()));
    }
    let (v, j) = vt.best_at(b.probs());
    Ok((v, vt.space().decode(j)))
}

pub(crate) fn node_space<T: Scalar>(jc: &JointController<T>) -> JointSpace {
    let mut radices = vec![jc.device_size()];
    radices.extend(jc.sizes());
    JointSpace::new(radices)
}

/// Joint actions with positive probability at joint node `coords`.
pub(crate) fn joint_action_support<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    coords: &[usize],
) -> Vec<(usize, T)> {
    let qc = coords[0];
    let jas = model.joint_actions();
    let mut out = vec![(0usize, T::one())];
    for (i, l) in jc.locals.iter().enumerate() {
        let row = l.action_row(qc, coords[i + 1]);
        let mut next = Vec::with_capacity(out.len() * row.len());
        for &(ja, p) in &out {
            for (a, &pa) in row.iter().enumerate() {
                if pa > T::zero() {
                    next.push((ja + a * jas.stride(i), p * pa));
                }
            }
        }
        out = next;
    }
    out
}

/// Calls `f(successor joint node, probability)` for every joint successor
/// of `coords` after joint action `acts` and joint observation `obs`.
pub(crate) fn for_each_successor<T: Scalar>(
    jc: &JointController<T>,
    space: &JointSpace,
    coords: &[usize],
    acts: &[usize],
    obs: &[usize],
    mut f: impl FnMut(usize, T),
) {
    let qc = coords[0];
    let rows: Vec<&[(usize, T)]> = jc
        .locals
        .iter()
        .enumerate()
        .map(|(i, l)| l.next(qc, coords[i + 1], acts[i], obs[i]))
        .collect();
    fn rec<T: Scalar>(rows: &[&[(usize, T)]], space: &JointSpace, k: usize, idx: usize, w: T, f: &mut impl FnMut(usize, T)) {
        if k == rows.len() {
            f(idx, w);
            return;
        }
        let stride = space.stride(k + 1);
        for &(q, p) in rows[k] {
            if p > T::zero() {
                rec(rows, space, k + 1, idx + q * stride, w * p, f);
            }
        }
    }
    for (qc2, &pc) in jc.device.row(qc).iter().enumerate() {
        if pc > T::zero() {
            rec(&rows, space, 0, qc2 * space.stride(0), pc, &mut f);
        }
    }
}

struct Kernel<'a, T: Scalar> {
    model: &'a DecPomdp<T>,
    jc: &'a JointController<T>,
    space: JointSpace,
    coords: Vec<usize>,
    g: Vec<T>,
}

impl<'a, T: Scalar> Kernel<'a, T> {
    fn new(model: &'a DecPomdp<T>, jc: &'a JointController<T>) -> Self {
        let space = node_space(jc);
        Self {
            coords: vec![0; space.dims()],
            g: vec![T::zero(); model.num_states()],
            model,
            jc,
            space,
        }
    }

    /// One application of the controller's Bellman operator at joint node `j`.
    fn backup(&mut self, j: usize, v: &[T], out: &mut [T]) {
        let m = self.model;
        let ns = m.num_states();
        let beta = m.discount();
        self.space.decode_into(j, &mut self.coords);
        out.iter_mut().for_each(|x| *x = T::zero());
        for (ja, pa) in joint_action_support(m, self.jc, &self.coords) {
            let acts = m.joint_actions().decode(ja);
            let g = &mut self.g;
            g.iter_mut().for_each(|x| *x = T::zero());
            for jo in 0..m.joint_observations().size() {
                let obs = m.joint_observations().decode(jo);
                for_each_successor(self.jc, &self.space, &self.coords, &acts, &obs, |succ, w| {
                    let col = &v[succ * ns..(succ + 1) * ns];
                    for s2 in 0..ns {
                        let o = m.observation(ja, s2, jo);
                        if o > T::zero() {
                            g[s2] += o * w * col[s2];
                        }
                    }
                });
            }
            for (s, o) in out.iter_mut().enumerate() {
                let fut: T = m.transitions_from(ja, s).iter().map(|&(s2, t)| t * g[s2]).sum();
                *o += pa * (m.reward(s, ja) + beta * fut);
            }
        }
    }
}

/// The controller's Bellman operator applied to a value vector laid out as
/// in [`ValueTable`].
pub fn bellman_apply<T: Scalar>(model: &DecPomdp<T>, jc: &JointController<T>, v: &[T]) -> Vec<T> {
    let mut k = Kernel::new(model, jc);
    let ns = model.num_states();
    let mut out = vec![T::zero(); v.len()];
    for j in 0..k.space.size() {
        k.backup(j, v, &mut out[j * ns..(j + 1) * ns]);
    }
    out
}

fn max_gap<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

/// Exact evaluation with default options.
pub fn evaluate<T: Scalar>(model: &DecPomdp<T>, jc: &JointController<T>) -> Result<ValueTable<T>> {
    evaluate_with(model, jc, &EvalOptions::default(), None)
}

/// Solves the evaluation system, starting from `warm` when given.
///
/// Small systems are solved by dense elimination; larger ones by
/// Gauss–Seidel sweeps until the max-norm residual meets the tolerance.
pub fn evaluate_with<T: Scalar>(
    model: &DecPomdp<T>,
    jc: &JointController<T>,
    opts: &EvalOptions,
    warm: Option<&[T]>,
) -> Result<ValueTable<T>> {
    jc.validate(model)?;
    let ns = model.num_states();
    let space = node_space(jc);
    let n = space.size() * ns;
    let beta = model.discount();
    let scale = T::one().max(model.r_max() / (T::one() - beta));
    let target = T::c(opts.tolerance).max(T::resolution() * scale * T::c(4.0));

    if let Some(w) = warm {
        if w.len() != n {
            return Err(Error::Dimension("warm start has the wrong length".into()));
        }
        let r = max_gap(&bellman_apply(model, jc, w), w);
        if r <= target {
            return Ok(ValueTable::from_parts(space, ns, w.to_vec(), r));
        }
    }

    let mut v = if n <= opts.dense_limit {
        dense_solve(model, jc, &space)?
    } else {
        warm.map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); n])
    };

    let mut kernel = Kernel::new(model, jc);
    let mut out = vec![T::zero(); ns];
    let mut residual = max_gap(&bellman_apply(model, jc, &v), &v);
    let mut sweeps = 0;
    while residual > target {
        let mut delta = T::zero();
        for j in 0..space.size() {
            kernel.backup(j, &v, &mut out);
            let col = &mut v[j * ns..(j + 1) * ns];
            delta = delta.max(max_gap(col, &out));
            col.copy_from_slice(&out);
        }
        sweeps += 1;
        if sweeps > opts.max_sweeps {
            return Err(Error::Solve(format!("no convergence after {sweeps} sweeps")));
        }
        if delta <= target {
            residual = max_gap(&bellman_apply(model, jc, &v), &v);
        }
    }
    Ok(ValueTable::from_parts(space, ns, v, residual))
}

fn dense_solve<T: Scalar>(model: &DecPomdp<T>, jc: &JointController<T>, space: &JointSpace) -> Result<Vec<T>> {
    let ns = model.num_states();
    let n = space.size() * ns;
    let beta = model.discount();
    let mut a = vec![T::zero(); n * n];
    let mut b = vec![T::zero(); n];
    for i in 0..n {
        a[i * n + i] = T::one();
    }
    let mut coords = vec![0; space.dims()];
    for j in 0..space.size() {
        space.decode_into(j, &mut coords);
        for (ja, pa) in joint_action_support(model, jc, &coords) {
            let acts = model.joint_actions().decode(ja);
            for s in 0..ns {
                b[j * ns + s] += pa * model.reward(s, ja);
            }
            for jo in 0..model.joint_observations().size() {
                let obs = model.joint_observations().decode(jo);
                for_each_successor(jc, space, &coords, &acts, &obs, |succ, w| {
                    for s in 0..ns {
                        let row = j * ns + s;
                        for &(s2, t) in model.transitions_from(ja, s) {
                            let o = model.observation(ja, s2, jo);
                            if o > T::zero() {
                                a[row * n + succ * ns + s2] -= beta * pa * t * o * w;
                            }
                        }
                    }
                });
            }
        }
    }
    solve_dense(a, b)
}

#[cfg(test)]
mod tests {
    use super::super::{make_initial, random_stochastic};
    use super::*;
    use crate::model::domains::builtin_domain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tiger_open_left_is_minus_150() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let jc = make_initial(&m, &[1, 1]).unwrap();
        let vt = evaluate(&m, &jc).unwrap();
        let b = BeliefState::new(m.initial_belief().to_vec()).unwrap();
        let (v, node) = value_at_belief(&vt, &b).unwrap();
        assert!((v + 150.0).abs() < 1e-9);
        assert_eq!(node, vec![0, 0, 0]);
    }

    #[test]
    fn dense_and_iterative_agree() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let jc = random_stochastic(&m, &[3, 4], 2, &mut rng);
        let dense = evaluate(&m, &jc).unwrap();
        let opts = EvalOptions {
            dense_limit: 0,
            ..EvalOptions::default()
        };
        let iter = evaluate_with(&m, &jc, &opts, None).unwrap();
        assert!(max_gap(dense.values(), iter.values()) < 1e-8);
        assert!(dense.residual() <= 1e-8 && iter.residual() <= 1e-8);
    }

    #[test]
    fn single_precision_evaluation() {
        let m: DecPomdp<f32> = builtin_domain("dec-tiger", &[]).unwrap();
        let jc = make_initial(&m, &[1, 1]).unwrap();
        let vt = evaluate(&m, &jc).unwrap();
        assert!((vt.belief_value(m.initial_belief(), 0) + 150.0).abs() < 1e-3);
    }

    #[test]
    fn ties_prefer_lowest_index() {
        let space = JointSpace::new(vec![1, 2]);
        let vt = ValueTable::from_parts(space, 1, vec![3.0, 3.0], 0.0);
        assert_eq!(vt.best_at(&[1.0]).1, 0);
    }

    #[test]
    fn select_restricts_columns() {
        let space = JointSpace::new(vec![1, 2, 2]);
        let vt = ValueTable::from_parts(space, 1, vec![0.0, 1.0, 2.0, 3.0], 0.0);
        let sub = vt.select(&[vec![0], vec![1], vec![0, 1]]);
        assert_eq!(sub.values(), &[2.0, 3.0]);
    }
}
