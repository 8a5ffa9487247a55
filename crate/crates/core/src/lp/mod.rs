//! Small dense linear-programming engine.
//!
//! The programs built by the controller transformations have at most a few
//! thousand columns and a few hundred rows once row generation is applied,
//! so a dense two-phase tableau simplex is adequate. Pricing is Dantzig's
//! rule; after a run of degenerate pivots the solver falls back to Bland's
//! rule, which cannot cycle.

mod format;
mod simplex;

use thiserror::Error;

use crate::scalar::Scalar;

pub use format::write_lp_format;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("infeasible (phase one objective {0})")]
    Infeasible(f64),
    #[error("unbounded")]
    Unbounded,
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
}

/// Programs with at most this many cut rows are solved in one go.
const DIRECT_ROWS: usize = 256;
const INITIAL_CUTS: usize = 32;
const CUTS_PER_ROUND: usize = 64;
const CUT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// One linear constraint `Σ coeffs · x  (sense)  rhs`, stored sparsely.
#[derive(Debug, Clone)]
pub struct Constraint<T> {
    pub coeffs: Vec<(usize, T)>,
    pub sense: Sense,
    pub rhs: T,
}

/// `maximize objective · x` subject to the constraints; variables are
/// nonnegative unless flagged free.
#[derive(Debug, Clone)]
pub struct LinearProgram<T> {
    pub objective: Vec<T>,
    pub free: Vec<bool>,
    pub constraints: Vec<Constraint<T>>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LpSolution<T> {
    pub objective: T,
    pub x: Vec<T>,
    pub pivots: usize,
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    /// Reduced-cost threshold for optimality.
    pub optimality_tol: f64,
    /// Smallest admissible pivot magnitude.
    pub pivot_tol: f64,
    /// Phase-one objective above which the program is declared infeasible.
    pub feasibility_tol: f64,
    pub max_pivots: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            optimality_tol: 1e-10,
            pivot_tol: 1e-10,
            feasibility_tol: 1e-8,
            max_pivots: 200_000,
        }
    }
}

impl<T: Scalar> LinearProgram<T> {
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![T::zero(); num_vars],
            free: vec![false; num_vars],
            constraints: Vec::new(),
            names: (0..num_vars).map(|j| format!("x{j}")).collect(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<(usize, T)>, sense: Sense, rhs: T) {
        self.constraints.push(Constraint { coeffs, sense, rhs });
    }

    pub fn solve(&self) -> Result<LpSolution<T>, LpError> {
        self.solve_with(&LpOptions::default())
    }

    pub fn solve_with(&self, opts: &LpOptions) -> Result<LpSolution<T>, LpError> {
        simplex::solve(self, opts)
    }

    /// Solves the program extended by the inequality rows `cuts`, adding
    /// only the rows violated at the current optimum (most violated first).
    /// The program together with any single cut must be bounded.
    pub fn solve_with_cuts(&self, cuts: &[Constraint<T>], opts: &LpOptions) -> Result<LpSolution<T>, LpError> {
        if cuts.len() <= DIRECT_ROWS {
            let mut full = self.clone();
            full.constraints.extend_from_slice(cuts);
            return full.solve_with(opts);
        }
        let mut order: Vec<usize> = (0..cuts.len()).collect();
        order.sort_by(|&a, &b| cuts[a].rhs.partial_cmp(&cuts[b].rhs).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        let mut active = vec![false; cuts.len()];
        let mut lp = self.clone();
        for &r in order.iter().take(INITIAL_CUTS) {
            active[r] = true;
            lp.constraints.push(cuts[r].clone());
        }
        loop {
            let sol = lp.solve_with(opts)?;
            let mut violated: Vec<(T, usize)> = Vec::new();
            for (r, c) in cuts.iter().enumerate() {
                if active[r] {
                    continue;
                }
                let lhs: T = c.coeffs.iter().map(|&(j, a)| a * sol.x[j]).sum();
                let gap = match c.sense {
                    Sense::Le => lhs - c.rhs,
                    Sense::Ge => c.rhs - lhs,
                    Sense::Eq => (lhs - c.rhs).abs(),
                };
                if gap > T::tol(CUT_TOL) * (T::one() + c.rhs.abs()) {
                    violated.push((gap, r));
                }
            }
            if violated.is_empty() {
                return Ok(sol);
            }
            violated.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
            for &(_, r) in violated.iter().take(CUTS_PER_ROUND) {
                active[r] = true;
                lp.constraints.push(cuts[r].clone());
            }
        }
    }

    /// Maximum constraint violation of `x` (bounds included).
    pub fn violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for (j, &v) in x.iter().enumerate() {
            if !self.free[j] {
                worst = worst.max(-v);
            }
        }
        for c in &self.constraints {
            let lhs: T = c.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let gap = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::<f64>::new(2);
        lp.objective = vec![3.0, 5.0];
        lp.add(vec![(0, 1.0)], Sense::Le, 4.0);
        lp.add(vec![(1, 2.0)], Sense::Le, 12.0);
        lp.add(vec![(0, 3.0), (1, 2.0)], Sense::Le, 18.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 36.0).abs() < 1e-12);
        assert!((sol.x[0] - 2.0).abs() < 1e-12);
        assert!((sol.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn equality_ge_and_free_variable() {
        // max -e  s.t. e >= x - 3, e >= 1 - x, x + y = 2, y >= 0.5, e free
        // optimum x = 1.5 ... e >= max(x-3, 1-x), x <= 1.5 -> choose x=1.5, e=-0.5?
        // e >= -1.5 and e >= -0.5 -> e = -0.5, objective 0.5
        let mut lp = LinearProgram::<f64>::new(3);
        lp.objective = vec![0.0, 0.0, -1.0];
        lp.free[2] = true;
        lp.add(vec![(2, 1.0), (0, -1.0)], Sense::Ge, -3.0);
        lp.add(vec![(2, 1.0), (0, 1.0)], Sense::Ge, 1.0);
        lp.add(vec![(0, 1.0), (1, 1.0)], Sense::Eq, 2.0);
        lp.add(vec![(1, 1.0)], Sense::Ge, 0.5);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 0.5).abs() < 1e-12, "{sol:?}");
        assert!(lp.violation(&sol.x) < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::<f64>::new(1);
        lp.add(vec![(0, 1.0)], Sense::Ge, 2.0);
        lp.add(vec![(0, 1.0)], Sense::Le, 1.0);
        assert!(matches!(lp.solve(), Err(LpError::Infeasible(_))));

        let mut lp = LinearProgram::<f64>::new(1);
        lp.objective = vec![1.0];
        lp.add(vec![(0, 1.0)], Sense::Ge, 2.0);
        assert_eq!(lp.solve().unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn negative_rhs_rows_are_normalised() {
        // max x s.t. -x >= -3  (x <= 3)
        let mut lp = LinearProgram::<f64>::new(1);
        lp.objective = vec![1.0];
        lp.add(vec![(0, -1.0)], Sense::Ge, -3.0);
        let sol = lp.solve().unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::<f64>::new(2);
        lp.objective = vec![1.0, 2.0];
        lp.add(vec![(0, 1.0), (1, 1.0)], Sense::Eq, 1.0);
        lp.add(vec![(0, 2.0), (1, 2.0)], Sense::Eq, 2.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Beale's classic cycling example under naive Dantzig pricing.
        let mut lp = LinearProgram::<f64>::new(4);
        lp.objective = vec![0.75, -150.0, 0.02, -6.0];
        lp.add(vec![(0, 0.25), (1, -60.0), (2, -0.04), (3, 9.0)], Sense::Le, 0.0);
        lp.add(vec![(0, 0.5), (1, -90.0), (2, -0.02), (3, 3.0)], Sense::Le, 0.0);
        lp.add(vec![(2, 1.0)], Sense::Le, 1.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 0.05).abs() < 1e-10);
    }

    #[test]
    fn single_precision_instantiation() {
        let mut lp = LinearProgram::<f32>::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.add(vec![(0, 1.0), (1, 2.0)], Sense::Le, 4.0);
        lp.add(vec![(0, 3.0), (1, 1.0)], Sense::Le, 6.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 2.8).abs() < 1e-5);
    }
}
