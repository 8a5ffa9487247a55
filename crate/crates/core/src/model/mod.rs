//! DEC-POMDP models: construction, validation, the text problem format,
//! benchmark domains and belief updates under fixed teammate policies.

mod belief;
pub mod domains;
mod format;
pub mod random;

use crate::error::{Error, Result};
use crate::joint::JointSpace;
use crate::scalar::Scalar;

pub use belief::{belief_update, observation_likelihood, BeliefState, FixedAgentPolicy};
pub use format::{parse_dpomdp, write_dpomdp};

/// Tolerance on probability rows, `|Σ p − 1|`.
pub const DIST_TOL: f64 = 1e-9;

/// A finite DEC-POMDP with discount and an initial state distribution.
///
/// Tables are stored densely with sparse row caches for the transition and
/// observation functions. Joint actions and joint observations are indexed
/// in mixed radix with agent 0 most significant.
#[derive(Debug, Clone)]
pub struct DecPomdp<T> {
    states: Vec<String>,
    actions: Vec<Vec<String>>,
    observations: Vec<Vec<String>>,
    discount: T,
    initial: Vec<T>,
    joint_actions: JointSpace,
    joint_observations: JointSpace,
    /// `[ja][s][s']`
    transition: Vec<T>,
    /// `[ja][s'][jo]`
    observation: Vec<T>,
    /// `[s][ja]`
    reward: Vec<T>,
    t_rows: Vec<Vec<(usize, T)>>,
    o_rows: Vec<Vec<(usize, T)>>,
}

/// Mutable staging area for a model; `build` validates and freezes it.
#[derive(Debug, Clone)]
pub struct ModelBuilder<T> {
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>,
    pub observations: Vec<Vec<String>>,
    pub discount: T,
    pub initial: Vec<T>,
    pub joint_actions: JointSpace,
    pub joint_observations: JointSpace,
    pub transition: Vec<T>,
    pub observation: Vec<T>,
    pub reward: Vec<T>,
}

impl<T: Scalar> ModelBuilder<T> {
    /// Zero-filled tables for the given label sets; the initial belief is
    /// uniform.
    pub fn new(
        states: Vec<String>,
        actions: Vec<Vec<String>>,
        observations: Vec<Vec<String>>,
        discount: T,
    ) -> Self {
        let ns = states.len();
        let joint_actions = JointSpace::new(actions.iter().map(Vec::len).collect());
        let joint_observations = JointSpace::new(observations.iter().map(Vec::len).collect());
        let na = joint_actions.size();
        let no = joint_observations.size();
        let uniform = if ns > 0 { T::one() / T::c(ns as f64) } else { T::zero() };
        Self {
            initial: vec![uniform; ns],
            transition: vec![T::zero(); na * ns * ns],
            observation: vec![T::zero(); na * ns * no],
            reward: vec![T::zero(); ns * na],
            states,
            actions,
            observations,
            discount,
            joint_actions,
            joint_observations,
        }
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    #[inline]
    pub fn t_index(&self, ja: usize, s: usize, s2: usize) -> usize {
        let ns = self.states.len();
        (ja * ns + s) * ns + s2
    }

    #[inline]
    pub fn o_index(&self, ja: usize, s2: usize, jo: usize) -> usize {
        (ja * self.states.len() + s2) * self.joint_observations.size() + jo
    }

    #[inline]
    pub fn r_index(&self, s: usize, ja: usize) -> usize {
        s * self.joint_actions.size() + ja
    }

    pub fn set_transition(&mut self, ja: usize, s: usize, s2: usize, p: T) {
        let i = self.t_index(ja, s, s2);
        self.transition[i] = p;
    }

    pub fn add_transition(&mut self, ja: usize, s: usize, s2: usize, p: T) {
        let i = self.t_index(ja, s, s2);
        self.transition[i] += p;
    }

    pub fn set_observation(&mut self, ja: usize, s2: usize, jo: usize, p: T) {
        let i = self.o_index(ja, s2, jo);
        self.observation[i] = p;
    }

    pub fn set_reward(&mut self, s: usize, ja: usize, r: T) {
        let i = self.r_index(s, ja);
        self.reward[i] = r;
    }

    pub fn build(self) -> Result<DecPomdp<T>> {
        self.build_with_tolerance(DIST_TOL)
    }

    pub fn build_with_tolerance(self, tol: f64) -> Result<DecPomdp<T>> {
        let ns = self.states.len();
        if ns == 0 {
            return Err(Error::Dimension("model has no states".into()));
        }
        if self.actions.is_empty() {
            return Err(Error::Dimension("model has no agents".into()));
        }
        if self.actions.len() != self.observations.len() {
            return Err(Error::Dimension(format!(
                "{} action sets but {} observation sets",
                self.actions.len(),
                self.observations.len()
            )));
        }
        for (i, (a, o)) in self.actions.iter().zip(&self.observations).enumerate() {
            if a.is_empty() || o.is_empty() {
                return Err(Error::Dimension(format!(
                    "agent {i} needs at least one action and one observation"
                )));
            }
        }
        if !(self.discount >= T::zero() && self.discount < T::one()) {
            return Err(Error::InvalidParameter(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if self.initial.len() != ns {
            return Err(Error::Dimension(format!(
                "initial belief has {} entries for {ns} states",
                self.initial.len()
            )));
        }
        check_distribution(&self.initial, tol, "start", || "b0".into())?;
        let na = self.joint_actions.size();
        let no = self.joint_observations.size();
        for ja in 0..na {
            for s in 0..ns {
                let row = &self.transition[(ja * ns + s) * ns..(ja * ns + s + 1) * ns];
                check_distribution(row, tol, "transition", || {
                    format!("T(a={}, s={})", ja_label(&self, ja), self.states[s])
                })?;
                let orow = &self.observation[(ja * ns + s) * no..(ja * ns + s + 1) * no];
                check_distribution(orow, tol, "observation", || {
                    format!("O(a={}, s'={})", ja_label(&self, ja), self.states[s])
                })?;
            }
        }
        if let Some(r) = self.reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite reward {r}")));
        }
        let t_rows = (0..na * ns)
            .map(|k| sparse_row(&self.transition[k * ns..(k + 1) * ns]))
            .collect();
        let o_rows = (0..na * ns)
            .map(|k| sparse_row(&self.observation[k * no..(k + 1) * no]))
            .collect();
        Ok(DecPomdp {
            states: self.states,
            actions: self.actions,
            observations: self.observations,
            discount: self.discount,
            initial: self.initial,
            joint_actions: self.joint_actions,
            joint_observations: self.joint_observations,
            transition: self.transition,
            observation: self.observation,
            reward: self.reward,
            t_rows,
            o_rows,
        })
    }
}

fn ja_label<T>(b: &ModelBuilder<T>, ja: usize) -> String {
    b.joint_actions
        .decode(ja)
        .iter()
        .enumerate()
        .map(|(i, &a)| b.actions[i][a].clone())
        .collect::<Vec<_>>()
        .join(",")
}

fn sparse_row<T: Scalar>(row: &[T]) -> Vec<(usize, T)> {
    row.iter()
        .enumerate()
        .filter(|(_, &p)| p > T::zero())
        .map(|(j, &p)| (j, p))
        .collect()
}

pub(crate) fn check_distribution<T: Scalar>(
    row: &[T],
    tol: f64,
    what: &str,
    label: impl FnOnce() -> String,
) -> Result<()> {
    let sum: T = row.iter().copied().sum();
    let negative = row.iter().any(|&p| p < T::zero() || !p.is_finite());
    if negative || (sum - T::one()).abs() > T::tol(tol) {
        return Err(Error::Distribution {
            what: what.into(),
            row: label(),
            sum: sum.f64(),
        });
    }
    Ok(())
}

impl<T: Scalar> DecPomdp<T> {
    pub fn num_agents(&self) -> usize {
        self.actions.len()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self, agent: usize) -> usize {
        self.actions[agent].len()
    }

    pub fn num_observations(&self, agent: usize) -> usize {
        self.observations[agent].len()
    }

    pub fn state_labels(&self) -> &[String] {
        &self.states
    }

    pub fn action_labels(&self, agent: usize) -> &[String] {
        &self.actions[agent]
    }

    pub fn observation_labels(&self, agent: usize) -> &[String] {
        &self.observations[agent]
    }

    pub fn joint_actions(&self) -> &JointSpace {
        &self.joint_actions
    }

    pub fn joint_observations(&self) -> &JointSpace {
        &self.joint_observations
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    pub fn initial_belief(&self) -> &[T] {
        &self.initial
    }

    #[inline]
    pub fn transition(&self, ja: usize, s: usize, s2: usize) -> T {
        let ns = self.states.len();
        self.transition[(ja * ns + s) * ns + s2]
    }

    /// Nonzero entries of `T(· | s, ja)`.
    #[inline]
    pub fn transitions_from(&self, ja: usize, s: usize) -> &[(usize, T)] {
        &self.t_rows[ja * self.states.len() + s]
    }

    #[inline]
    pub fn observation(&self, ja: usize, s2: usize, jo: usize) -> T {
        self.observation[(ja * self.states.len() + s2) * self.joint_observations.size() + jo]
    }

    /// Nonzero entries of `O(· | ja, s')`.
    #[inline]
    pub fn observations_at(&self, ja: usize, s2: usize) -> &[(usize, T)] {
        &self.o_rows[ja * self.states.len() + s2]
    }

    #[inline]
    pub fn reward(&self, s: usize, ja: usize) -> T {
        self.reward[s * self.joint_actions.size() + ja]
    }

    /// Largest absolute immediate reward.
    pub fn r_max(&self) -> T {
        self.reward
            .iter()
            .fold(T::zero(), |m, &r| m.max(r.abs()))
    }

    /// Same model with a different initial belief.
    pub fn with_initial_belief(&self, b: &[T]) -> Result<Self> {
        if b.len() != self.num_states() {
            return Err(Error::Dimension("initial belief length".into()));
        }
        check_distribution(b, DIST_TOL, "start", || "b0".into())?;
        let mut m = self.clone();
        m.initial = b.to_vec();
        Ok(m)
    }

    pub fn to_builder(&self) -> ModelBuilder<T> {
        ModelBuilder {
            states: self.states.clone(),
            actions: self.actions.clone(),
            observations: self.observations.clone(),
            discount: self.discount,
            initial: self.initial.clone(),
            joint_actions: self.joint_actions.clone(),
            joint_observations: self.joint_observations.clone(),
            transition: self.transition.clone(),
            observation: self.observation.clone(),
            reward: self.reward.clone(),
        }
    }

    /// Converts every table to another scalar type.
    ///
    /// Rows are validated again at the target precision.
    pub fn cast<U: Scalar>(&self) -> Result<DecPomdp<U>> {
        let conv = |v: &[T]| v.iter().map(|x| U::c(x.f64())).collect::<Vec<U>>();
        let b = ModelBuilder {
            states: self.states.clone(),
            actions: self.actions.clone(),
            observations: self.observations.clone(),
            discount: U::c(self.discount.f64()),
            initial: conv(&self.initial),
            joint_actions: self.joint_actions.clone(),
            joint_observations: self.joint_observations.clone(),
            transition: conv(&self.transition),
            observation: conv(&self.observation),
            reward: conv(&self.reward),
        };
        b.build_with_tolerance(U::resolution().f64() * 10.0)
    }

    /// Largest absolute difference over all tables, or `None` when the
    /// dimensions differ.
    pub fn max_difference(&self, other: &Self) -> Option<f64> {
        if self.actions.iter().map(Vec::len).ne(other.actions.iter().map(Vec::len))
            || self.observations.iter().map(Vec::len).ne(other.observations.iter().map(Vec::len))
            || self.states.len() != other.states.len()
        {
            return None;
        }
        let diff = |a: &[T], b: &[T]| {
            a.iter()
                .zip(b)
                .fold(0.0f64, |m, (x, y)| m.max((x.f64() - y.f64()).abs()))
        };
        Some(
            diff(&self.transition, &other.transition)
                .max(diff(&self.observation, &other.observation))
                .max(diff(&self.reward, &other.reward))
                .max(diff(&self.initial, &other.initial))
                .max((self.discount.f64() - other.discount.f64()).abs()),
        )
    }

    pub(crate) fn action_index(&self, agent: usize, name: &str) -> Option<usize> {
        self.actions[agent].iter().position(|a| a == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelBuilder<f64> {
        let mut b = ModelBuilder::new(
            vec!["a".into(), "b".into()],
            vec![vec!["x".into()]],
            vec![vec!["o".into()]],
            0.9,
        );
        for s in 0..2 {
            b.set_transition(0, s, s, 1.0);
            b.set_observation(0, s, 0, 1.0);
        }
        b
    }

    #[test]
    fn valid_model_builds() {
        let m = tiny().build().unwrap();
        assert_eq!(m.num_states(), 2);
        assert_eq!(m.transitions_from(0, 1), &[(1, 1.0)]);
        assert_eq!(m.r_max(), 0.0);
    }

    #[test]
    fn rejects_bad_transition_row() {
        let mut b = tiny();
        b.set_transition(0, 0, 0, 0.9);
        match b.build() {
            Err(Error::Distribution { what, row, sum }) => {
                assert_eq!(what, "transition");
                assert!(row.contains("s=a"));
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_discount_one() {
        let mut b = tiny();
        b.discount = 1.0;
        assert!(matches!(b.build(), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn rejects_negative_entries() {
        let mut b = tiny();
        b.set_observation(0, 0, 0, -1.0);
        assert!(b.build().is_err());
    }

    #[test]
    fn casts_to_single_precision() {
        let m = tiny().build().unwrap();
        let m32: DecPomdp<f32> = m.cast().unwrap();
        assert_eq!(m32.discount(), 0.9f32);
    }
}
