//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use decpi::controller::{evaluate, make_initial, make_initial_named, random_stochastic};
use decpi::heuristic::{heuristic_policy_iteration, HpiOptions};
use decpi::model::domains::{
    alternating_controller, builtin_domain, correlated_coin_controller, default_teammate_policy, initial_actions,
};
use decpi::model::random::{random_belief, random_model, RandomSpec};
use decpi::oracle::{best_tree_value, memoryless_independent_search};
use decpi::solver::{exhaustive_backup, exhaustive_sizes, policy_iteration, PiOptions};
use decpi::transform::{
    bounded_backup_device_with, bounded_backup_local_with, bounded_pi_best, reduce_device_node, reduce_local_node,
    TransformOptions,
};
use decpi::{Belief, Controller, Model};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn tiger() -> Model {
    builtin_domain("dec-tiger", &[]).unwrap()
}

fn tiger_initial(m: &Model) -> Controller {
    make_initial_named(m, &["open-left", "open-left"]).unwrap()
}

fn exact_pi(m: &Model, jc: &Controller, iters: usize, bounded: bool, slack: f64, cap: usize) -> decpi::solver::PiOutcome<f64> {
    let opts = PiOptions {
        use_bounded_updates: bounded,
        vpt_slack: slack,
        node_cap: cap,
        max_iters: Some(iters),
        wall_clock: Some(Duration::from_secs(3600)),
        ..PiOptions::default()
    };
    policy_iteration(m, jc, 1e-6, &opts).unwrap()
}

fn criterion_1() -> Outcome {
    let m = tiger();
    let out = exact_pi(&m, &tiger_initial(&m), 3, false, 0.0, decpi::solver::DEFAULT_NODE_CAP);
    let v = out.log.values();
    let sizes: Vec<Vec<usize>> = out.log.records.iter().map(|r| r.sizes.clone()).collect();
    if v.len() < 4 {
        return outcome(false, format!("stopped after {} iterations ({})", v.len() - 1, out.termination));
    }
    let published = [-137.0, -117.8, -98.9];
    let mut pass = (v[0] + 150.0).abs() <= 1e-6;
    for (k, p) in published.iter().enumerate() {
        pass &= v[k + 1] >= *p && v[k + 1] <= p + 2.0;
    }
    pass &= sizes[1].iter().all(|&s| s <= 3);
    pass &= sizes[2] == vec![15, 15];
    pass &= sizes[3].iter().all(|&s| s <= 255);
    outcome(pass, format!("values {v:.4?}, sizes {sizes:?}"))
}

fn criterion_2() -> Outcome {
    let m = tiger();
    let out = exact_pi(&m, &tiger_initial(&m), 2, true, 0.0, decpi::solver::DEFAULT_NODE_CAP);
    let v = out.log.values();
    let pi_ok = v.len() > 1 && v[1..].iter().all(|x| (x + 20.0).abs() <= 0.5);
    let (_, best, _) = bounded_pi_best(&m, &[4, 4], 1, 200, 20, 7).unwrap();
    let run_ok = (best + 20.0).abs() <= 0.5;
    outcome(
        pi_ok && run_ok,
        format!("bounded PI values {v:.4?}; bounded-only best of 20 at sizes (4,4): {best:.4}"),
    )
}

fn criterion_3() -> Outcome {
    let expected = [
        ("dec-tiger", vec!["1", "3", "27", "2187"]),
        ("meeting-grid", vec!["1", "5", "3125"]),
        ("box-pushing", vec!["1", "4", "4096"]),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, want) in expected {
        let m: Model = builtin_domain(name, &[]).unwrap();
        let rows = exhaustive_sizes(&m, &[1, 1], want.len() - 1);
        let got: Vec<String> = rows.iter().map(|r| r[0].to_string()).collect();
        pass &= got == want && rows.iter().all(|r| r[0] == r[1]);
        detail.push(format!("{name} {}", got.join("→")));
    }
    outcome(pass, detail.join("; "))
}

fn criterion_4() -> Outcome {
    let value0 = |name: &str| {
        let m: Model = builtin_domain(name, &[]).unwrap();
        let jc = make_initial(&m, &initial_actions(name, &m)).unwrap();
        evaluate(&m, &jc).unwrap().best_at(m.initial_belief()).0
    };
    let bp = value0("box-pushing");
    let grid = value0("meeting-grid");
    let pass = (bp + 2.0).abs() <= 1e-6 && (grid - 2.8).abs() <= 0.3;
    outcome(pass, format!("box-pushing {bp:.6}, meeting-grid {grid:.6}"))
}

fn criterion_5() -> Outcome {
    let m: Model = builtin_domain("correlation-example", &[10.0]).unwrap();
    let (independent, _) = memoryless_independent_search(&m, 0.01).unwrap();
    let vt = evaluate(&m, &correlated_coin_controller(&m).unwrap()).unwrap();
    let corr: Vec<f64> = (0..2).map(|s| 0.5 * (vt.get(s, 0) + vt.get(s, 1))).collect();
    let alt = evaluate(&m, &alternating_controller(&m).unwrap()).unwrap().get(0, 0);
    let pass = independent <= -49.5 && corr.iter().all(|v| v.abs() <= 1e-8) && (alt - 100.0).abs() <= 1e-8;
    outcome(
        pass,
        format!("independent best worst-state {independent:.4}, correlated {:.1e}, alternating {alt:.8}", corr[0].abs().max(corr[1].abs())),
    )
}

fn small_models(count: u64) -> Vec<Model> {
    (0..count)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let spec = RandomSpec::small(rng.gen_range(2..=3), rng.gen_range(1..=2), rng.gen_range(1..=2));
            random_model(&spec, seed).unwrap()
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let mut models = small_models(20);
    models.push(tiger());
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for m in &models {
        let tail = make_initial(m, &vec![0; m.num_agents()]).unwrap();
        let mut backed = tail.clone();
        for t in 1..=2 {
            backed = exhaustive_backup(m, &backed, 10_000).unwrap();
            let vt = evaluate(m, &backed).unwrap();
            for _ in 0..20 {
                let b = random_belief(&mut rng, m.num_states());
                let oracle = best_tree_value(m, &tail, t, &Belief::new(b.clone()).unwrap()).unwrap();
                worst = worst.max((oracle - vt.best_at(&b).0).abs());
            }
        }
    }
    outcome(worst <= 1e-8, format!("max |backup − tree oracle| {worst:.3e} over 21 models"))
}

fn criterion_7() -> Outcome {
    let opts = TransformOptions::default();
    let mut worst_drop = 0.0f64;
    let mut worst_eps = f64::INFINITY;
    let (mut reductions, mut backups) = (0, 0);
    for (k, m) in small_models(50).iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(70 + k as u64);
        let sizes = [rng.gen_range(2..=3), rng.gen_range(2..=3)];
        let device = rng.gen_range(1..=2);
        let jc = random_stochastic(m, &sizes, device, &mut rng);
        let vt = evaluate(m, &jc).unwrap();
        // bounded backups on every node of the original controller
        let mut targets: Vec<(Option<usize>, usize)> = (0..device).map(|q| (None, q)).collect();
        for (i, &n) in sizes.iter().enumerate() {
            targets.extend((0..n).map(|q| (Some(i), q)));
        }
        for &(agent, q) in &targets {
            let out = match agent {
                None => bounded_backup_device_with(m, &jc, &vt, q, &opts).unwrap(),
                Some(i) => bounded_backup_local_with(m, &jc, &vt, i, q, &opts).unwrap(),
            };
            backups += 1;
            worst_eps = worst_eps.min(out.witness.epsilon);
            let fresh = evaluate(m, &out.controller).unwrap();
            for (new, old) in fresh.values().iter().zip(vt.values()) {
                worst_drop = worst_drop.max(old - new);
            }
        }
        // reductions on every node that admits one
        for &(agent, q) in &targets {
            let size = match agent {
                None => device,
                Some(i) => sizes[i],
            };
            if size < 2 {
                continue;
            }
            let red = match agent {
                None => reduce_device_node(m, &jc, &vt, q, 0.0).unwrap(),
                Some(i) => reduce_local_node(m, &jc, &vt, i, q, 0.0).unwrap(),
            };
            let Some((jc2, _)) = red else { continue };
            reductions += 1;
            let coord = agent.map_or(0, |i| i + 1);
            let keep: Vec<Vec<usize>> = vt
                .space()
                .radices()
                .iter()
                .enumerate()
                .map(|(c, &n)| (0..n).filter(|&x| c != coord || x != q).collect())
                .collect();
            let before = vt.select(&keep);
            let fresh = evaluate(m, &jc2).unwrap();
            for (new, old) in fresh.values().iter().zip(before.values()) {
                worst_drop = worst_drop.max(old - new);
            }
        }
    }
    let pass = worst_drop <= 1e-7 && worst_eps >= -1e-9;
    outcome(
        pass,
        format!(
            "{backups} bounded backups, {reductions} reductions; largest value drop {worst_drop:.2e}, smallest ε* {worst_eps:.2e}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for m in &small_models(20) {
        let jc = make_initial(m, &vec![0; m.num_agents()]).unwrap();
        let b0 = m.initial_belief();
        let mut bare = jc.clone();
        for t in 1..=2 {
            bare = exhaustive_backup(m, &bare, 10_000).unwrap();
            let bare_v = evaluate(m, &bare).unwrap().best_at(b0).0;
            let full = exact_pi(m, &jc, t, true, 0.0, 10_000);
            let v = *full.log.values().last().unwrap();
            if full.log.records.len() == t + 1 {
                worst = worst.max(bare_v - v);
            }
        }
    }
    outcome(worst <= 1e-7, format!("largest shortfall of full PI below bare backups {worst:.2e}"))
}

fn criterion_9() -> Outcome {
    let m = tiger();
    let jc = tiger_initial(&m);
    let b0 = Belief::new(m.initial_belief().to_vec()).unwrap();
    let others: Vec<_> = (0..2).map(|i| default_teammate_policy("dec-tiger", &m, i)).collect();
    let cap = 300;
    let exact = exact_pi(&m, &jc, 10, false, 0.0, cap);
    let hpi = heuristic_policy_iteration(
        &m,
        &jc,
        &b0,
        &others,
        &HpiOptions {
            k: 10,
            seed: 0,
            node_cap: cap,
            max_iters: Some(10),
            ..HpiOptions::default()
        },
    )
    .unwrap();
    let (ev, hv) = (exact.log.values(), hpi.log.values());
    let parity = ev.iter().zip(&hv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let more = hv.len() > ev.len();
    let better = hpi.final_value() >= exact.final_value();
    outcome(
        parity <= 1e-6 && more && better,
        format!(
            "exact {ev:.4?} ({}), hpi {hv:.4?} ({}); parity {parity:.2e}",
            exact.termination, hpi.termination
        ),
    )
}

fn criterion_10() -> Outcome {
    let m = tiger();
    let jc = tiger_initial(&m);
    let exact = exact_pi(&m, &jc, 2, false, 0.0, decpi::solver::DEFAULT_NODE_CAP);
    let relaxed = exact_pi(&m, &jc, 2, false, 0.1, decpi::solver::DEFAULT_NODE_CAP);
    let beta = m.discount();
    let bound = exact.final_value() - 0.1 * beta / (1.0 - beta) - 1e-6;
    let sizes_ok = relaxed
        .controller
        .sizes()
        .iter()
        .zip(exact.controller.sizes())
        .all(|(a, b)| *a <= b);
    outcome(
        relaxed.final_value() >= bound && sizes_ok,
        format!(
            "relaxed {:.4} with sizes {:?}, exact {:.4} with sizes {:?}",
            relaxed.final_value(),
            relaxed.controller.sizes(),
            exact.final_value(),
            exact.controller.sizes()
        ),
    )
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = Vec::new();
    for (k, run) in criteria {
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {k:>2}: {status} ({:.1}s) {}", start.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.push(k);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
