//! Seeded random DEC-POMDP instances for property tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DecPomdp, ModelBuilder};
use crate::error::Result;
use crate::scalar::Scalar;

/// Shape of a random instance.
#[derive(Debug, Clone)]
pub struct RandomSpec {
    pub states: usize,
    pub actions: Vec<usize>,
    pub observations: Vec<usize>,
    pub discount: f64,
    /// Rewards are drawn uniformly from `[-reward_scale, reward_scale]`.
    pub reward_scale: f64,
}

impl RandomSpec {
    pub fn small(states: usize, actions: usize, observations: usize) -> Self {
        Self {
            states,
            actions: vec![actions; 2],
            observations: vec![observations; 2],
            discount: 0.9,
            reward_scale: 10.0,
        }
    }
}

fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // exponential spacings give a uniform draw from the simplex
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

/// Draws a dense random model; the same seed always yields the same model.
pub fn random_model<T: Scalar>(spec: &RandomSpec, seed: u64) -> Result<DecPomdp<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ModelBuilder::<T>::new(
        names("s", spec.states),
        spec.actions.iter().map(|&n| names("a", n)).collect(),
        spec.observations.iter().map(|&n| names("o", n)).collect(),
        T::c(spec.discount),
    );
    let ns = spec.states;
    let na = b.joint_actions.size();
    let no = b.joint_observations.size();
    for ja in 0..na {
        for s in 0..ns {
            for (s2, p) in random_distribution(&mut rng, ns).into_iter().enumerate() {
                b.set_transition(ja, s, s2, T::c(p));
            }
            let r = rng.gen_range(-spec.reward_scale..=spec.reward_scale);
            b.set_reward(s, ja, T::c(r));
        }
        for s2 in 0..ns {
            for (jo, p) in random_distribution(&mut rng, no).into_iter().enumerate() {
                b.set_observation(ja, s2, jo, T::c(p));
            }
        }
    }
    b.initial = random_distribution(&mut rng, ns).into_iter().map(T::c).collect();
    b.build()
}

/// A random point of the probability simplex over `n` states.
pub fn random_belief<T: Scalar, R: Rng>(rng: &mut R, n: usize) -> Vec<T> {
    random_distribution(rng, n).into_iter().map(T::c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_model() {
        let spec = RandomSpec::small(3, 2, 2);
        let a: DecPomdp<f64> = random_model(&spec, 5).unwrap();
        let b: DecPomdp<f64> = random_model(&spec, 5).unwrap();
        let c: DecPomdp<f64> = random_model(&spec, 6).unwrap();
        assert_eq!(a.max_difference(&b), Some(0.0));
        assert!(a.max_difference(&c).unwrap() > 0.0);
    }
}
