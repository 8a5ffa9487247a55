//! Dual dominance LP, solved by row generation.
//!
//! Rows are the "hidden state" combinations against which a node must be
//! dominated; `m(r, k)` is the value of candidate node `k` at row `r`.

use crate::error::Result;
use crate::lp::{LinearProgram, LpOptions, Sense};
use crate::scalar::Scalar;

use super::LpDump;

/// Per-row largest and second-largest node value, for a cheap necessary
/// condition on dominance.
pub(crate) struct TopTwo<T> {
    best: Vec<(T, usize)>,
    second: Vec<T>,
}

impl<T: Scalar> TopTwo<T> {
    pub(crate) fn compute(rows: usize, nodes: usize, m: &impl Fn(usize, usize) -> T) -> Self {
        let mut best = Vec::with_capacity(rows);
        let mut second = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut b = (T::neg_infinity(), usize::MAX);
            let mut s = T::neg_infinity();
            for k in 0..nodes {
                let v = m(r, k);
                if v > b.0 {
                    s = b.0;
                    b = (v, k);
                } else if v > s {
                    s = v;
                }
            }
            best.push(b);
            second.push(s);
        }
        Self { best, second }
    }

    /// Largest value at row `r` among nodes other than `q`.
    #[inline]
    pub(crate) fn others_max(&self, r: usize, q: usize) -> T {
        if self.best[r].1 == q {
            self.second[r]
        } else {
            self.best[r].0
        }
    }
}

/// Outcome of a dominance search that found a dominating combination.
pub(crate) struct Dominated<T> {
    pub epsilon: T,
    /// Distribution over the other nodes (indices among all nodes).
    pub distribution: Vec<(usize, T)>,
}

const INITIAL_ROWS: usize = 8;
const ROWS_PER_ROUND: usize = 16;

/// Maximizes `ε` subject to `m(r, q) + ε ≤ Σ_k x_k m(r, k)` for every row,
/// with `x` a distribution over the nodes other than `q`. Returns the
/// optimum when it is at least `-threshold`, otherwise `None`.
pub(crate) fn dominance_search<T: Scalar>(
    rows: usize,
    nodes: usize,
    q: usize,
    m: &impl Fn(usize, usize) -> T,
    top: &TopTwo<T>,
    threshold: T,
    lp_opts: &LpOptions,
    dump: Option<&LpDump>,
) -> Result<Option<Dominated<T>>> {
    if nodes < 2 {
        return Ok(None);
    }
    // ε ≤ max_k m(r, k) − m(r, q) at every row
    let mut gaps: Vec<(T, usize)> = (0..rows).map(|r| (m(r, q) - top.others_max(r, q), r)).collect();
    if gaps.iter().any(|&(g, _)| -g < -threshold) {
        return Ok(None);
    }
    gaps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let cands: Vec<usize> = (0..nodes).filter(|&k| k != q).collect();
    let mut active: Vec<usize> = gaps.iter().take(INITIAL_ROWS).map(|g| g.1).collect();
    let mut in_active = vec![false; rows];
    for &r in &active {
        in_active[r] = true;
    }

    loop {
        let mut lp = LinearProgram::<T>::new(1 + cands.len());
        lp.objective[0] = T::one();
        lp.free[0] = true;
        lp.names[0] = "eps".into();
        for (j, &k) in cands.iter().enumerate() {
            lp.names[j + 1] = format!("x_{k}");
        }
        for &r in &active {
            let mut coeffs = Vec::with_capacity(cands.len() + 1);
            coeffs.push((0, T::one()));
            for (j, &k) in cands.iter().enumerate() {
                coeffs.push((j + 1, -m(r, k)));
            }
            lp.add(coeffs, Sense::Le, -m(r, q));
        }
        lp.add((1..=cands.len()).map(|j| (j, T::one())).collect(), Sense::Eq, T::one());
        if let Some(d) = dump {
            d.write("dominance", &lp);
        }
        let sol = lp.solve_with(lp_opts)?;
        let eps = sol.x[0];
        if eps < -threshold {
            // the relaxation bounds the full optimum from above
            return Ok(None);
        }
        let support: Vec<(usize, T)> = cands
            .iter()
            .enumerate()
            .filter(|&(j, _)| sol.x[j + 1] > T::zero())
            .map(|(j, &k)| (k, sol.x[j + 1]))
            .collect();
        let mut violated: Vec<(T, usize)> = Vec::new();
        for r in 0..rows {
            if in_active[r] {
                continue;
            }
            let mixed: T = support.iter().map(|&(k, x)| x * m(r, k)).sum();
            let v = m(r, q) + eps - mixed;
            let tol = T::tol(1e-11) * (T::one() + m(r, q).abs());
            if v > tol {
                violated.push((v, r));
            }
        }
        if violated.is_empty() {
            let z: T = support.iter().map(|e| e.1).sum();
            let distribution = support.into_iter().map(|(k, x)| (k, x / z)).collect();
            return Ok(Some(Dominated { epsilon: eps, distribution }));
        }
        violated.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        for &(_, r) in violated.iter().take(ROWS_PER_ROUND) {
            in_active[r] = true;
            active.push(r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn search(mat: &[Vec<f64>], q: usize) -> Option<Dominated<f64>> {
        let m = |r: usize, k: usize| mat[r][k];
        let top = TopTwo::compute(mat.len(), mat[0].len(), &m);
        dominance_search(mat.len(), mat[0].len(), q, &m, &top, 1e-9, &LpOptions::default(), None).unwrap()
    }

    #[test]
    fn convex_combination_dominates() {
        // node 2 is (0.4, 0.4) against (1, 0) and (0, 1): the mixture gives 0.5 each
        let mat = vec![vec![1.0, 0.0, 0.4], vec![0.0, 1.0, 0.4]];
        let d = search(&mat, 2).unwrap();
        assert!((d.epsilon - 0.1).abs() < 1e-12);
        assert_eq!(d.distribution.len(), 2);
        assert!(search(&mat, 0).is_none());
    }

    #[test]
    fn twin_node_is_removable() {
        let mat = vec![vec![1.0, 3.0, 1.0], vec![2.0, -1.0, 2.0]];
        let d = search(&mat, 2).unwrap();
        assert!(d.epsilon.abs() < 1e-12);
        assert_eq!(d.distribution, vec![(0, 1.0)]);
    }

    #[test]
    fn row_generation_matches_full_lp() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let rows = 300;
            let mat: Vec<Vec<f64>> = (0..rows)
                .map(|_| {
                    let mut row: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
                    let mix = 0.3 * row[0] + 0.3 * row[1] + 0.4 * row[2];
                    row.push(mix + rng.gen_range(-0.5..0.2));
                    row
                })
                .collect();
            let m = |r: usize, k: usize| mat[r][k];
            let top = TopTwo::compute(rows, 6, &m);
            let opts = LpOptions::default();
            let d = dominance_search(rows, 6, 5, &m, &top, 1e9, &opts, None).unwrap().unwrap();

            let mut lp = LinearProgram::<f64>::new(6);
            lp.objective[0] = 1.0;
            lp.free[0] = true;
            for row in &mat {
                let mut c = vec![(0, 1.0)];
                c.extend((0..5).map(|k| (k + 1, -row[k])));
                lp.add(c, Sense::Le, -row[5]);
            }
            lp.add((1..6).map(|j| (j, 1.0)).collect(), Sense::Eq, 1.0);
            let full = lp.solve().unwrap();
            assert!((full.objective - d.epsilon).abs() < 1e-9);
        }
    }
}
