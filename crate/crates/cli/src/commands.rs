use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use decpi::controller::{
    deserialize_controller, evaluate, export_dot, make_initial, make_initial_named, serialize_controller,
};
use decpi::heuristic::{heuristic_policy_iteration_with, HpiOptions};
use decpi::model::domains::{
    alternating_controller, builtin_domain, correlated_coin_controller, default_teammate_policy, initial_actions,
};
use decpi::model::random::random_belief;
use decpi::oracle::{
    best_tree_value, memoryless_independent_search, monte_carlo_value, truncation_horizon, Start, TREE_CAP,
};
use decpi::solver::{exhaustive_backup, policy_iteration_with, IterationLog, PiOptions};
use decpi::transform::{bounded_pi_best_with, LpDump, TransformOptions};
use decpi::{parse_dpomdp, write_dpomdp, Belief, Controller, Model, TeammatePolicy};

use crate::args::{Algo, ControllerArg, EvalArgs, ExportArgs, Format, SimulateArgs, SolveArgs, Source, VerifyArgs};
use crate::Usage;

const OUT_ENV: &str = "DECPI_OUT_DIR";
const DEFAULT_OUT: &str = "decpi-out";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

struct Loaded {
    model: Model,
    /// Builtin domain name, empty for problem files.
    name: String,
}

fn load_model(src: &Source) -> Result<Loaded> {
    match (&src.domain, &src.file) {
        (Some(d), None) => {
            let params: Vec<f64> = src.reward.into_iter().collect();
            let model = builtin_domain(d, &params).map_err(|e| usage(e.to_string()))?;
            Ok(Loaded {
                model,
                name: d.clone(),
            })
        }
        (None, Some(f)) => {
            if src.reward.is_some() {
                return Err(usage("--R only applies to the correlation example"));
            }
            let text = fs::read_to_string(f).map_err(|e| usage(format!("cannot read {}: {e}", f.display())))?;
            let model = parse_dpomdp(&text).map_err(|e| usage(format!("{}: {e}", f.display())))?;
            Ok(Loaded {
                model,
                name: String::new(),
            })
        }
        _ => Err(usage("give exactly one of --domain and --file")),
    }
}

fn initial_controller(m: &Loaded, init: &[String]) -> Result<Controller> {
    if init.is_empty() {
        return Ok(make_initial(&m.model, &initial_actions(&m.name, &m.model))?);
    }
    let names: Vec<&str> = if init.len() == 1 {
        vec![init[0].as_str(); m.model.num_agents()]
    } else {
        init.iter().map(String::as_str).collect()
    };
    make_initial_named(&m.model, &names).map_err(|e| usage(e.to_string()))
}

fn load_controller(m: &Loaded, arg: &ControllerArg) -> Result<Controller> {
    match &arg.controller {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            let jc: Controller = deserialize_controller(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            jc.validate(&m.model)
                .map_err(|e| usage(format!("{} does not fit the model: {e}", path.display())))?;
            Ok(jc)
        }
        None => initial_controller(m, &arg.init),
    }
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Comment lines opening every output file.
fn provenance(seed: u64) -> String {
    let config: Vec<String> = std::env::args().skip(1).collect();
    format!(
        "# decpi {}\n# config: {}\n# seed: {seed}\n",
        env!("CARGO_PKG_VERSION"),
        config.join(" ")
    )
}

fn write_file(path: &Path, header: &str, body: &str) -> Result<()> {
    fs::write(path, format!("{header}{body}")).with_context(|| format!("writing {}", path.display()))
}

fn policies(m: &Loaded, spec: &str) -> Result<Vec<TeammatePolicy>> {
    let n = m.model.num_agents();
    match spec {
        "default" => Ok((0..n).map(|i| default_teammate_policy(&m.name, &m.model, i)).collect()),
        "uniform" => Ok((0..n).map(|i| TeammatePolicy::uniform(&m.model, i)).collect()),
        list => {
            let probs: Vec<f64> = list
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| usage(format!("bad --policy `{list}`")))?;
            let dists = vec![probs; n];
            (0..n)
                .map(|i| TeammatePolicy::state_independent(&m.model, i, &dists).map_err(|e| usage(e.to_string())))
                .collect()
        }
    }
}

struct Summary {
    algo: &'static str,
    value: Option<f64>,
    sizes: Vec<usize>,
    device: usize,
    termination: String,
    iterations: usize,
    note: Option<String>,
    seconds: f64,
}

impl Summary {
    fn render(&self, deterministic: bool) -> String {
        let value = self.value.map_or("none".to_string(), |v| format!("{v:.10}"));
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        let mut s = format!(
            "algo: {}\nvalue_b0: {value}\nsizes: {}\ndevice_size: {}\ntermination: {}\niterations: {}\n",
            self.algo,
            sizes.join(","),
            self.device,
            self.termination,
            self.iterations
        );
        if let Some(n) = &self.note {
            s.push_str(&format!("note: {n}\n"));
        }
        let secs = if deterministic { 0.0 } else { self.seconds };
        s.push_str(&format!("seconds: {secs:.3}\n"));
        s
    }
}

pub fn solve(a: &SolveArgs) -> Result<ExitCode> {
    let m = load_model(&a.source)?;
    if !(a.epsilon > 0.0) {
        return Err(usage("--epsilon must be positive"));
    }
    if !(a.wall_clock > 0.0) {
        return Err(usage("--wall-clock must be positive"));
    }
    if a.slack < 0.0 {
        return Err(usage("--slack must be non-negative"));
    }
    let n = m.model.num_agents();
    let sizes = match a.sizes.len() {
        1 => vec![a.sizes[0]; n],
        k if k == n => a.sizes.clone(),
        _ => return Err(usage(format!("--sizes needs 1 or {n} values"))),
    };
    let jc0 = if a.algo == Algo::BoundedOnly { None } else { Some(initial_controller(&m, &a.init)?) };
    let teammates = if a.algo == Algo::Hpi { Some(policies(&m, &a.policy)?) } else { None };

    let dir = out_dir(&a.out);
    fs::create_dir_all(dir.join("checkpoints")).with_context(|| format!("creating {}", dir.display()))?;
    let header = provenance(a.seed);
    let start = Instant::now();
    let wall = Duration::from_secs_f64(a.wall_clock);
    let transform = TransformOptions {
        dump: a.dump_lp.as_ref().map(LpDump::new),
        ..TransformOptions::default()
    };

    let csv_path = dir.join("iterations.csv");
    let mut csv = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    csv.write_all(header.as_bytes())?;
    let mut io_error: Option<std::io::Error> = None;
    let ckpt_dir = dir.join("checkpoints");
    let deterministic = a.deterministic;
    let mut observe = |r: &decpi::solver::IterationRecord, jc: &Controller| {
        if r.t == 0 {
            let _ = writeln!(csv, "{}", IterationLog::csv_header(r.sizes.len()));
        }
        let row = writeln!(csv, "{}", IterationLog::csv_row(r, deterministic)).and_then(|_| csv.flush());
        let ck = fs::write(
            ckpt_dir.join(format!("iter-{:04}.ctl", r.t)),
            format!("{header}{}", serialize_controller(jc)),
        );
        if let Err(e) = row.and(ck) {
            io_error.get_or_insert(e);
        }
    };

    let (summary, controller) = match a.algo {
        Algo::Pi | Algo::PiBounded => {
            let opts = PiOptions {
                use_bounded_updates: a.algo == Algo::PiBounded,
                vpt_slack: a.slack,
                node_cap: a.node_cap,
                wall_clock: Some(wall),
                max_iters: a.max_iters,
                transform,
            };
            let jc0 = jc0.expect("built above");
            let out = policy_iteration_with(&m.model, &jc0, a.epsilon, &opts, &mut observe)?;
            let s = Summary {
                algo: if a.algo == Algo::Pi { "pi" } else { "pi-bounded" },
                value: Some(out.final_value()),
                sizes: out.controller.sizes(),
                device: out.controller.device_size(),
                termination: out.termination.to_string(),
                iterations: out.log.records.len() - 1,
                note: out.note.clone(),
                seconds: start.elapsed().as_secs_f64(),
            };
            (s, Some(out.controller))
        }
        Algo::Hpi => {
            let k = a.k.unwrap_or(if m.name == "box-pushing" { 20 } else { 10 });
            if k == 0 {
                return Err(usage("--k must be positive"));
            }
            let opts = HpiOptions {
                k,
                seed: a.seed,
                node_cap: a.node_cap,
                wall_clock: Some(wall),
                max_iters: a.max_iters,
                transform,
            };
            let b0 = Belief::new(m.model.initial_belief().to_vec())?;
            let others = teammates.expect("built above");
            let jc0 = jc0.expect("built above");
            let out = heuristic_policy_iteration_with(&m.model, &jc0, &b0, &others, &opts, &mut observe)?;
            write_file(&dir.join("points.txt"), &header, &out.points.to_text())?;
            let s = Summary {
                algo: "hpi",
                value: Some(out.final_value()),
                sizes: out.controller.sizes(),
                device: 1,
                termination: out.termination.to_string(),
                iterations: out.log.records.len() - 1,
                note: out.note.clone(),
                seconds: start.elapsed().as_secs_f64(),
            };
            (s, Some(out.controller))
        }
        Algo::BoundedOnly => {
            if sizes.contains(&0) || a.device == 0 || a.restarts == 0 {
                return Err(usage("--sizes, --device and --restarts must be positive"));
            }
            let opts = TransformOptions {
                deadline: Some(start + wall),
                ..transform
            };
            let run = bounded_pi_best_with(&m.model, &sizes, a.device, a.steps, a.restarts, a.seed, &opts);
            match run {
                Ok((jc, best, finals)) => {
                    writeln!(csv, "restart,value_b0")?;
                    for (r, v) in finals.iter().enumerate() {
                        writeln!(csv, "{r},{v:.10}")?;
                    }
                    let s = Summary {
                        algo: "bounded-only",
                        value: Some(best),
                        sizes: jc.sizes(),
                        device: jc.device_size(),
                        termination: "converged".into(),
                        iterations: a.steps,
                        note: Some(format!("best of {} runs of {} steps", a.restarts, a.steps)),
                        seconds: start.elapsed().as_secs_f64(),
                    };
                    (s, Some(jc))
                }
                Err(decpi::Error::WallClock) => {
                    let s = Summary {
                        algo: "bounded-only",
                        value: None,
                        sizes,
                        device: a.device,
                        termination: "wall-clock".into(),
                        iterations: 0,
                        note: Some(decpi::Error::WallClock.to_string()),
                        seconds: start.elapsed().as_secs_f64(),
                    };
                    (s, None)
                }
                Err(e) => return Err(e.into()),
            }
        }
    };
    if let Some(e) = io_error {
        return Err(e).context("writing iteration outputs");
    }
    if let Some(jc) = &controller {
        write_file(&dir.join("controller.ctl"), &header, &serialize_controller(jc))?;
    }
    let text = summary.render(a.deterministic);
    write_file(&dir.join("summary.txt"), &header, &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: &EvalArgs) -> Result<ExitCode> {
    let m = load_model(&a.source)?;
    let jc = load_controller(&m, &a.controller)?;
    let vt = evaluate(&m.model, &jc)?;
    let space = vt.space();
    println!("joint (q_c,q_1..q_n) | {}", m.model.state_labels().join(" "));
    for j in 0..space.size().min(a.max_rows) {
        let coords: Vec<String> = space.decode(j).iter().map(|c| c.to_string()).collect();
        let vals: Vec<String> = vt.column(j).iter().map(|v| format!("{v:.6}")).collect();
        println!("({}) | {}", coords.join(","), vals.join(" "));
    }
    if space.size() > a.max_rows {
        println!("... {} more joint nodes", space.size() - a.max_rows);
    }
    let (v, j) = vt.best_at(m.model.initial_belief());
    let best: Vec<String> = space.decode(j).iter().map(|c| c.to_string()).collect();
    println!("V(b0) = {v:.6} at ({})", best.join(","));
    Ok(ExitCode::SUCCESS)
}

pub fn simulate(a: &SimulateArgs) -> Result<ExitCode> {
    let m = load_model(&a.source)?;
    let jc = load_controller(&m, &a.controller)?;
    if a.episodes < 2 {
        return Err(usage("--episodes must be at least 2"));
    }
    let vt = evaluate(&m.model, &jc)?;
    let ns = m.model.num_states();
    let (start, b) = match a.state {
        Some(s) if s < ns => {
            let mut b = vec![0.0; ns];
            b[s] = 1.0;
            (Start::State(s), b)
        }
        Some(s) => return Err(usage(format!("state {s} out of range"))),
        None => {
            let b = m.model.initial_belief().to_vec();
            (Start::Belief(Belief::new(b.clone())?), b)
        }
    };
    let (exact, j) = vt.best_at(&b);
    let joint = vt.space().decode(j);
    let horizon = a
        .horizon
        .unwrap_or_else(|| truncation_horizon(m.model.discount(), m.model.r_max(), 0.01));
    let (mean, se) = monte_carlo_value(&m.model, &jc, &start, &joint, a.episodes, horizon, a.seed)?;
    println!("episodes: {}\nhorizon: {horizon}\nseed: {}", a.episodes, a.seed);
    println!("mean: {mean:.6}\nstderr: {se:.6}\nexact: {exact:.6}");
    println!("z: {:.3}", if se > 0.0 { (mean - exact) / se } else { 0.0 });
    Ok(ExitCode::SUCCESS)
}

fn check(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

pub fn verify(a: &VerifyArgs) -> Result<ExitCode> {
    let m = load_model(&a.source)?;
    let model = &m.model;
    let tail = initial_controller(&m, &[])?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut all_ok = true;
    let b0 = model.initial_belief().to_vec();

    // backups against brute-force trees
    let mut backed = tail.clone();
    for t in 1..=2 {
        backed = match exhaustive_backup(model, &backed, TREE_CAP) {
            Ok(b) => b,
            Err(_) => {
                println!("tree oracle t={t}: skipped (controller too large)");
                break;
            }
        };
        let vt = match evaluate(model, &backed) {
            Ok(v) if backed.sizes().iter().product::<usize>() <= 100_000 => v,
            _ => {
                println!("tree oracle t={t}: skipped (controller too large)");
                break;
            }
        };
        let mut beliefs = vec![b0.clone()];
        beliefs.extend((0..a.beliefs).map(|_| random_belief(&mut rng, model.num_states())));
        let mut worst = 0.0f64;
        let mut skipped = false;
        for b in &beliefs {
            match best_tree_value(model, &tail, t, &Belief::new(b.clone())?) {
                Ok(v) => worst = worst.max((v - vt.best_at(b).0).abs()),
                Err(decpi::Error::OracleLimit(_)) => {
                    skipped = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        if skipped {
            println!("tree oracle t={t}: skipped (too many trees)");
            break;
        }
        let ok = worst <= 1e-8;
        all_ok &= ok;
        println!("tree oracle t={t}: max |diff| {worst:.3e} over {} beliefs {}", beliefs.len(), check(ok));
    }

    // simulation against the linear system
    let vt = evaluate(model, &tail)?;
    let (exact, j) = vt.best_at(&b0);
    let joint = vt.space().decode(j);
    let horizon = truncation_horizon(model.discount(), model.r_max(), 0.01);
    let (mean, se) = monte_carlo_value(
        model,
        &tail,
        &Start::Belief(Belief::new(b0.clone())?),
        &joint,
        a.episodes,
        horizon,
        a.seed,
    )?;
    let ok = (mean - exact).abs() <= 3.0 * se + 0.01 || (se == 0.0 && (mean - exact).abs() <= 0.01);
    all_ok &= ok;
    println!("monte carlo: mean {mean:.4} ± {se:.4}, exact {exact:.4} {}", check(ok));

    // independent memoryless policies
    if model.num_agents() == 2 && (0..2).all(|i| model.num_actions(i) <= 3) {
        let res = if (0..2).all(|i| model.num_actions(i) == 2) { 0.01 } else { 0.05 };
        let (best, dists) = memoryless_independent_search(model, res)?;
        let d: Vec<String> = dists
            .iter()
            .map(|p| p.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/"))
            .collect();
        println!("independent memoryless best worst-state value: {best:.4} at [{}]", d.join(", "));
    } else {
        println!("independent memoryless search: skipped");
    }

    if m.name == "correlation-example" {
        let r = a.source.reward.unwrap_or(10.0);
        let beta = model.discount();
        let vt = evaluate(model, &correlated_coin_controller(model)?)?;
        let corr = (0..2)
            .map(|s| 0.5 * (vt.get(s, 0) + vt.get(s, 1)))
            .fold(f64::INFINITY, f64::min);
        let alt = evaluate(model, &alternating_controller(model)?)?.get(0, 0);
        let ok = corr.abs() < 1e-8 && (alt - r / (1.0 - beta)).abs() < 1e-8;
        all_ok &= ok;
        println!("correlated one-node controllers: {corr:.6}");
        println!("alternating two-node controllers from s1: {alt:.6} {}", check(ok));
    }
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn export(a: &ExportArgs) -> Result<ExitCode> {
    let m = load_model(&a.source)?;
    let text = match a.format {
        Format::Dpomdp => write_dpomdp(&m.model),
        Format::Dot => export_dot(&load_controller(&m, &a.controller)?, Some(&m.model)),
        Format::Controller => serialize_controller::<f64>(&load_controller(&m, &a.controller)?),
    };
    match &a.output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}
