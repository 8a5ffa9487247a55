use super::{LinearProgram, LpError, LpOptions, LpSolution, Sense};
use crate::scalar::Scalar;

/// Degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_LIMIT: usize = 50;
/// Pivots smaller than this fraction of the column's largest entry are skipped.
const REL_PIVOT: f64 = 1e-7;
/// Relative size of the right-hand-side shift used against stalling.
const PERTURBATION: f64 = 1e-9;

struct Tableau<T> {
    rows: usize,
    width: usize,
    data: Vec<T>,
    basis: Vec<usize>,
    /// Reduced-cost row; the last entry holds minus the objective value.
    cost: Vec<T>,
    banned: Vec<bool>,
    pivots: usize,
    /// Original row index of every tableau row.
    row_ids: Vec<usize>,
    /// Whether the right-hand side currently carries a perturbation.
    perturbed: bool,
}

impl<T: Scalar> Tableau<T> {
    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.width + j]
    }

    fn rhs_col(&self) -> usize {
        self.width - 1
    }

    fn pivot(&mut self, p: usize, q: usize) {
        let w = self.width;
        let inv = T::one() / self.at(p, q);
        for v in &mut self.data[p * w..(p + 1) * w] {
            *v *= inv;
        }
        self.data[p * w + q] = T::one();
        let (before, rest) = self.data.split_at_mut(p * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |row: &mut [T]| {
            let f = row[q];
            if f != T::zero() {
                for (r, &pv) in row.iter_mut().zip(prow.iter()) {
                    *r -= f * pv;
                }
                row[q] = T::zero();
            }
        };
        for row in before.chunks_mut(w) {
            eliminate(row);
        }
        for row in after.chunks_mut(w) {
            eliminate(row);
        }
        eliminate(&mut self.cost);
        self.basis[p] = q;
        self.pivots += 1;
    }

    /// Replaces the basic values by the exact ones for the original
    /// right-hand side.
    fn restore_rhs(&mut self, original: &[T]) {
        if let Some(x) = refine(self, original) {
            let rhs = self.rhs_col();
            for (i, v) in x.into_iter().enumerate() {
                self.data[i * self.width + rhs] = v;
            }
        }
        self.perturbed = false;
    }

    fn perturb_rhs(&mut self) {
        self.perturbed = true;
        let rhs = self.rhs_col();
        let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
        for i in 0..self.rows {
            h ^= h << 13;
            h ^= h >> 7;
            h ^= h << 17;
            let u = T::c(1.0 + (h % 1024) as f64 / 1024.0);
            let b = &mut self.data[i * self.width + rhs];
            *b += T::tol(PERTURBATION) * u * (T::one() + b.abs());
        }
    }

    /// Minimum-ratio row, ties to the lowest basic index.
    fn bland_ratio(&self, q: usize, piv_tol: T) -> Option<(usize, T)> {
        let rhs = self.rhs_col();
        let mut leave: Option<(usize, T)> = None;
        for i in 0..self.rows {
            let a = self.at(i, q);
            if a > piv_tol {
                let ratio = self.at(i, rhs).max(T::zero()) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((p, r)) => {
                        let tie = (ratio - r).abs() <= T::resolution() * (T::one() + r.abs());
                        if (!tie && ratio < r) || (tie && self.basis[i] < self.basis[p]) {
                            Some((i, ratio))
                        } else {
                            Some((p, r))
                        }
                    }
                };
            }
        }
        leave
    }

    /// Harris two-pass ratio test: among rows whose ratio is within the
    /// relaxed bound, the largest pivot wins.
    fn harris_ratio(&self, q: usize, piv_tol: T, feas_tol: T) -> Option<(usize, T)> {
        let rhs = self.rhs_col();
        let mut bound = T::infinity();
        for i in 0..self.rows {
            let a = self.at(i, q);
            if a > piv_tol {
                bound = bound.min((self.at(i, rhs).max(T::zero()) + feas_tol) / a);
            }
        }
        if bound == T::infinity() {
            return None;
        }
        let mut leave: Option<(usize, T, T)> = None;
        for i in 0..self.rows {
            let a = self.at(i, q);
            if a > piv_tol {
                let ratio = self.at(i, rhs).max(T::zero()) / a;
                if ratio <= bound && leave.is_none_or(|(_, _, b)| a > b) {
                    leave = Some((i, ratio, a));
                }
            }
        }
        leave.map(|(i, r, _)| (i, r))
    }

    /// Runs primal simplex iterations until optimality.
    ///
    /// A stall first shifts every right-hand side by a small deterministic
    /// amount; Bland's rule is the last resort.
    fn optimize(&mut self, opts: &LpOptions) -> Result<(), LpError> {
        let opt_tol = T::tol(opts.optimality_tol);
        let piv_tol = T::tol(opts.pivot_tol);
        let feas_tol = T::tol(opts.feasibility_tol) * T::c(0.01);
        let rhs = self.rhs_col();
        let mut bland = false;
        let mut perturbed = self.perturbed;
        let mut degenerate = 0usize;
        loop {
            if self.pivots >= opts.max_pivots {
                return Err(LpError::IterationLimit(opts.max_pivots));
            }
            let mut entering = None;
            let mut best = opt_tol;
            for j in 0..rhs {
                if self.banned[j] {
                    continue;
                }
                let d = self.cost[j];
                if d > best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(q) = entering else {
                return Ok(());
            };

            let col_max = (0..self.rows).fold(T::zero(), |m, i| m.max(self.at(i, q).abs()));
            let piv_tol = piv_tol.max(col_max * T::tol(REL_PIVOT));
            let leave = if bland { self.bland_ratio(q, piv_tol) } else { self.harris_ratio(q, piv_tol, feas_tol) };
            let Some((p, ratio)) = leave else {
                return Err(LpError::Unbounded);
            };
            // a pivot that barely moves the objective counts as degenerate
            let gain = self.cost[q] * ratio;
            if gain <= T::resolution() * T::c(1e3) * (T::one() + self.cost[rhs].abs()) {
                degenerate += 1;
                if degenerate > DEGENERATE_LIMIT {
                    if perturbed {
                        bland = true;
                    } else {
                        self.perturb_rhs();
                        perturbed = true;
                        degenerate = 0;
                    }
                }
            } else {
                degenerate = 0;
            }
            self.pivot(p, q);
        }
    }
}

pub(super) fn solve<T: Scalar>(
    lp: &LinearProgram<T>,
    opts: &LpOptions,
) -> Result<LpSolution<T>, LpError> {
    let n = lp.num_vars();
    // Column map: each variable gets a column, free variables a second
    // (negated) one.
    let mut neg_col = vec![usize::MAX; n];
    let mut ncols = n;
    for j in 0..n {
        if lp.free[j] {
            neg_col[j] = ncols;
            ncols += 1;
        }
    }
    let m = lp.constraints.len();
    let mut slack_col = vec![usize::MAX; m];
    let mut art_col = vec![usize::MAX; m];
    let mut flip = vec![false; m];
    for (i, c) in lp.constraints.iter().enumerate() {
        let neg = c.rhs < T::zero();
        flip[i] = neg;
        let sense = match (c.sense, neg) {
            (Sense::Le, true) => Sense::Ge,
            (Sense::Ge, true) => Sense::Le,
            (s, _) => s,
        };
        if sense != Sense::Eq {
            slack_col[i] = ncols;
            ncols += 1;
        }
        if sense != Sense::Le {
            art_col[i] = usize::MAX - 1; // assigned below
        }
    }
    let first_art = ncols;
    for a in art_col.iter_mut() {
        if *a == usize::MAX - 1 {
            *a = ncols;
            ncols += 1;
        }
    }
    let width = ncols + 1;
    let mut t = Tableau {
        rows: m,
        width,
        data: vec![T::zero(); m * width],
        basis: vec![0; m],
        cost: vec![T::zero(); width],
        banned: vec![false; ncols],
        pivots: 0,
        row_ids: (0..m).collect(),
        perturbed: false,
    };
    for (i, c) in lp.constraints.iter().enumerate() {
        let s = if flip[i] { -T::one() } else { T::one() };
        let row = &mut t.data[i * width..(i + 1) * width];
        for &(j, a) in &c.coeffs {
            row[j] += s * a;
            if lp.free[j] {
                row[neg_col[j]] -= s * a;
            }
        }
        row[ncols] = s * c.rhs;
        let sense = match (c.sense, flip[i]) {
            (Sense::Le, true) => Sense::Ge,
            (Sense::Ge, true) => Sense::Le,
            (s, _) => s,
        };
        match sense {
            Sense::Le => {
                row[slack_col[i]] = T::one();
                t.basis[i] = slack_col[i];
            }
            Sense::Ge => {
                row[slack_col[i]] = -T::one();
                row[art_col[i]] = T::one();
                t.basis[i] = art_col[i];
            }
            Sense::Eq => {
                row[art_col[i]] = T::one();
                t.basis[i] = art_col[i];
            }
        }
    }

    let original = t.data.clone();

    // Phase one: maximize minus the sum of artificials.
    if first_art < ncols {
        for i in 0..m {
            if t.basis[i] >= first_art {
                for j in 0..width {
                    let v = t.at(i, j);
                    t.cost[j] += v;
                }
            }
        }
        for j in first_art..ncols {
            t.cost[j] = T::zero();
        }
        t.optimize(opts)?;
        let infeasibility = if t.perturbed {
            t.restore_rhs(&original);
            (0..t.rows)
                .filter(|&i| t.basis[i] >= first_art)
                .map(|i| t.at(i, ncols).abs())
                .fold(T::zero(), |a, b| a + b)
        } else {
            t.cost[ncols]
        };
        if infeasibility > T::tol(opts.feasibility_tol) {
            return Err(LpError::Infeasible(infeasibility.f64()));
        }
        // Drive artificials out of the basis; rows that cannot be pivoted
        // are redundant and get dropped.
        let piv_tol = T::tol(opts.pivot_tol);
        let mut keep = vec![true; m];
        for i in 0..m {
            if t.basis[i] < first_art {
                continue;
            }
            let mut best: Option<(usize, T)> = None;
            for j in 0..first_art {
                let a = t.at(i, j).abs();
                if a > piv_tol && best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            match best {
                Some((j, _)) => t.pivot(i, j),
                None => keep[i] = false,
            }
        }
        if keep.iter().any(|k| !k) {
            let mut data = Vec::with_capacity(t.data.len());
            let mut basis = Vec::new();
            let mut row_ids = Vec::new();
            for i in 0..m {
                if keep[i] {
                    data.extend_from_slice(&t.data[i * width..(i + 1) * width]);
                    basis.push(t.basis[i]);
                    row_ids.push(t.row_ids[i]);
                }
            }
            t.rows = basis.len();
            t.data = data;
            t.basis = basis;
            t.row_ids = row_ids;
        }
        for j in first_art..ncols {
            t.banned[j] = true;
        }
    }

    // Phase two.
    let mut cost = vec![T::zero(); ncols];
    for j in 0..n {
        cost[j] = lp.objective[j];
        if lp.free[j] {
            cost[neg_col[j]] = -lp.objective[j];
        }
    }
    t.cost = vec![T::zero(); width];
    t.cost[..ncols].copy_from_slice(&cost);
    for i in 0..t.rows {
        let cb = cost[t.basis[i]];
        if cb != T::zero() {
            for j in 0..width {
                let v = t.at(i, j);
                t.cost[j] -= cb * v;
            }
        }
    }
    t.optimize(opts)?;

    let mut col_val = vec![T::zero(); ncols];
    let basic = refine(&t, &original).unwrap_or_else(|| (0..t.rows).map(|i| t.at(i, ncols)).collect());
    for (i, v) in basic.into_iter().enumerate() {
        col_val[t.basis[i]] = v.max(T::zero());
    }
    let x: Vec<T> = (0..n)
        .map(|j| {
            if lp.free[j] {
                col_val[j] - col_val[neg_col[j]]
            } else {
                col_val[j]
            }
        })
        .collect();
    let objective = lp.objective.iter().zip(&x).map(|(&c, &v)| c * v).sum();
    Ok(LpSolution {
        objective,
        x,
        pivots: t.pivots,
    })
}

/// Basic values recomputed from the original rows, which removes the error
/// accumulated in the tableau; `None` when the basis matrix is singular.
fn refine<T: Scalar>(t: &Tableau<T>, original: &[T]) -> Option<Vec<T>> {
    let m = t.rows;
    let w = t.width;
    let mut b = Vec::with_capacity(m);
    let mut a = vec![T::zero(); m * m];
    for (i, &r) in t.row_ids.iter().enumerate() {
        for (k, &col) in t.basis.iter().enumerate() {
            a[i * m + k] = original[r * w + col];
        }
        b.push(original[r * w + w - 1]);
    }
    let x = crate::linalg::solve_dense(a, b).ok()?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}
