use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use decpi::controller::{deserialize_controller, evaluate, make_initial_named, random_stochastic, serialize_controller};
use decpi::heuristic::{heuristic_policy_iteration, point_prune_all, BeliefPointSet, HpiOptions};
use decpi::model::domains::{builtin_domain, default_teammate_policy};
use decpi::model::random::{random_model, RandomSpec};
use decpi::oracle::{monte_carlo_value, truncation_horizon, Start};
use decpi::transform::TransformOptions;
use decpi::{Belief, Controller, Model};

fn tiger() -> Model {
    builtin_domain("dec-tiger", &[]).unwrap()
}

#[test]
fn simulation_matches_linear_system() {
    for seed in 0..4 {
        let m: Model = random_model(&RandomSpec::small(3, 2, 2), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jc: Controller = random_stochastic(&m, &[2, 2], 2, &mut rng);
        let vt = evaluate(&m, &jc).unwrap();
        let beta = m.discount();
        let h = truncation_horizon(beta, m.r_max(), 1e-3);
        for s in 0..m.num_states() {
            let (mean, se) = monte_carlo_value(&m, &jc, &Start::State(s), &[0, 1, 0], 20_000, h, seed).unwrap();
            let exact = vt.get(s, jc_joint(&jc, &[0, 1, 0]));
            assert!((mean - exact).abs() <= 5.0 * se + 1e-3, "seed {seed} s {s}: {mean} vs {exact} (se {se})");
        }
    }
}

fn jc_joint(jc: &Controller, nodes: &[usize]) -> usize {
    let mut radix = vec![jc.device_size()];
    radix.extend(jc.sizes());
    nodes.iter().zip(&radix).fold(0, |acc, (q, r)| acc * r + q)
}

#[test]
fn controller_text_round_trip() {
    let m: Model = random_model(&RandomSpec::small(2, 2, 2), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let jc: Controller = random_stochastic(&m, &[3, 2], 2, &mut rng);
    let back: Controller = deserialize_controller(&serialize_controller(&jc)).unwrap();
    assert_eq!(back.max_difference(&jc), Some(0.0));
}

#[test]
fn single_precision_evaluation_tracks_double() {
    let m: Model = tiger();
    let jc = make_initial_named(&m, &["listen", "listen"]).unwrap();
    let v64 = evaluate(&m, &jc).unwrap().get(0, 0);
    let m32 = builtin_domain::<f32>("dec-tiger", &[]).unwrap();
    let v32 = evaluate(&m32, &jc.cast::<f32>()).unwrap().get(0, 0) as f64;
    assert!((v64 - v32).abs() <= 1e-3 * v64.abs().max(1.0), "{v64} vs {v32}");
}

#[test]
fn heuristic_iteration_is_deterministic() {
    let m = tiger();
    let jc = make_initial_named(&m, &["open-left", "open-left"]).unwrap();
    let b0 = Belief::new(m.initial_belief().to_vec()).unwrap();
    let others: Vec<_> = (0..2).map(|i| default_teammate_policy("dec-tiger", &m, i)).collect();
    let opts = HpiOptions {
        k: 6,
        seed: 5,
        node_cap: 100,
        max_iters: Some(3),
        ..HpiOptions::default()
    };
    let a = heuristic_policy_iteration(&m, &jc, &b0, &others, &opts).unwrap();
    let b = heuristic_policy_iteration(&m, &jc, &b0, &others, &opts).unwrap();
    assert_eq!(serialize_controller(&a.controller), serialize_controller(&b.controller));
    assert_eq!(a.points.to_text(), b.points.to_text());
    assert_eq!(a.log.values(), b.log.values());
}

#[test]
fn point_pruning_keeps_the_best_value_at_every_point() {
    let m = tiger();
    let b0 = Belief::new(m.initial_belief().to_vec()).unwrap();
    let others: Vec<_> = (0..2).map(|i| default_teammate_policy("dec-tiger", &m, i)).collect();
    let points = BeliefPointSet::generate(&m, &b0, 8, &others, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let jc: Controller = random_stochastic(&m, &[4, 4], 1, &mut rng);
    let vt = evaluate(&m, &jc).unwrap();
    let (pruned, pvt, removed) = point_prune_all(&m, &jc, &vt, &points, &TransformOptions::default()).unwrap();
    pruned.validate(&m).unwrap();
    let before: usize = jc.sizes().iter().sum();
    let after: usize = pruned.sizes().iter().sum();
    assert_eq!(before - after, removed);
    let fresh = evaluate(&m, &pruned).unwrap();
    for (x, y) in pvt.values().iter().zip(fresh.values()) {
        assert!((x - y).abs() <= 1e-6);
    }
    for b in points.union() {
        let (old, _) = vt.best_at(b.probs());
        let (new, _) = fresh.best_at(b.probs());
        assert!(new >= old - 1e-6, "{new} < {old}");
    }
}

#[test]
fn belief_points_survive_text_round_trip() {
    let m = tiger();
    let b0 = Belief::new(m.initial_belief().to_vec()).unwrap();
    let others: Vec<_> = (0..2).map(|i| default_teammate_policy("dec-tiger", &m, i)).collect();
    let points = BeliefPointSet::generate(&m, &b0, 5, &others, 9).unwrap();
    let back: BeliefPointSet<f64> = BeliefPointSet::from_text(&points.to_text()).unwrap();
    assert_eq!(back.to_text(), points.to_text());
    assert!(back.replay(&m, &b0, &others).unwrap() <= 1e-9);
}
