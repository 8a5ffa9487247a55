//! Benchmark domains: two-agent tiger, meeting on a grid, cooperative box
//! pushing, and a two-state example where correlated randomization beats
//! every independent memoryless policy.

use super::{DecPomdp, FixedAgentPolicy, ModelBuilder};
use crate::controller::{CorrelationDevice, JointController, LocalController, Node};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DOMAINS: [&str; 4] = ["dec-tiger", "meeting-grid", "box-pushing", "correlation-example"];

const DISCOUNT: f64 = 0.9;

fn labels(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Builds a named benchmark model. `correlation-example` takes the reward
/// magnitude `R > 0` as its only parameter (default 10).
pub fn builtin_domain<T: Scalar>(name: &str, params: &[f64]) -> Result<DecPomdp<T>> {
    if name != "correlation-example" && !params.is_empty() {
        return Err(Error::InvalidParameter(format!("`{name}` takes no parameters")));
    }
    match name {
        "dec-tiger" => dec_tiger(),
        "meeting-grid" => meeting_grid(),
        "box-pushing" => box_pushing(),
        "correlation-example" => {
            if params.len() > 1 {
                return Err(Error::InvalidParameter("correlation-example takes one parameter R".into()));
            }
            let r = params.first().copied().unwrap_or(10.0);
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidParameter(format!("R must be positive, got {r}")));
            }
            correlation_example(r)
        }
        other => Err(Error::UnknownDomain(other.to_string())),
    }
}

/// Teammate policy used to generate belief points for the heuristic
/// solver: listen 0.8 / each door 0.1 on the tiger problem, uniform
/// elsewhere.
pub fn default_teammate_policy<T: Scalar>(name: &str, model: &DecPomdp<T>, agent: usize) -> FixedAgentPolicy<T> {
    if name == "dec-tiger" {
        let d = vec![T::c(0.8), T::c(0.1), T::c(0.1)];
        let dists = vec![d; model.num_agents()];
        FixedAgentPolicy::state_independent(model, agent, &dists).expect("valid tiger policy")
    } else {
        FixedAgentPolicy::uniform(model, agent)
    }
}

/// First action of each agent in the initial one-node controllers:
/// open-left on the tiger problem, the first listed action elsewhere.
pub fn initial_actions<T: Scalar>(name: &str, model: &DecPomdp<T>) -> Vec<usize> {
    let first = if name == "dec-tiger" { 1 } else { 0 };
    (0..model.num_agents()).map(|i| first.min(model.num_actions(i) - 1)).collect()
}

fn dec_tiger<T: Scalar>() -> Result<DecPomdp<T>> {
    const LISTEN: usize = 0;
    const OPEN_LEFT: usize = 1;
    let mut b = ModelBuilder::<T>::new(
        labels(&["tiger-left", "tiger-right"]),
        vec![labels(&["listen", "open-left", "open-right"]); 2],
        vec![labels(&["hear-left", "hear-right"]); 2],
        T::c(DISCOUNT),
    );
    let jas = b.joint_actions.clone();
    let jos = b.joint_observations.clone();
    for ja in 0..jas.size() {
        let a = jas.decode(ja);
        let both_listen = a[0] == LISTEN && a[1] == LISTEN;
        for s in 0..2 {
            // door hiding the tiger for this state
            let tiger_door = OPEN_LEFT + s;
            let treasure_door = OPEN_LEFT + 1 - s;
            let r = match (a[0], a[1]) {
                (LISTEN, LISTEN) => -2.0,
                (x, y) if x == y && x == treasure_door => 20.0,
                (x, y) if x == y && x == tiger_door => -50.0,
                (LISTEN, x) | (x, LISTEN) if x == tiger_door => -101.0,
                (LISTEN, x) | (x, LISTEN) if x == treasure_door => 9.0,
                _ => -100.0,
            };
            b.set_reward(s, ja, T::c(r));
            for s2 in 0..2 {
                let p = if both_listen {
                    if s == s2 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    0.5
                };
                b.set_transition(ja, s, s2, T::c(p));
            }
        }
        for s2 in 0..2 {
            for jo in 0..jos.size() {
                let o = jos.decode(jo);
                let p = if both_listen {
                    o.iter().map(|&oi| if oi == s2 { 0.85 } else { 0.15 }).product()
                } else {
                    0.25
                };
                b.set_observation(ja, s2, jo, T::c(p));
            }
        }
    }
    b.initial = vec![T::c(0.5), T::c(0.5)];
    b.build()
}

/// Cells of the 2×2 grid, row-major from the top-left.
fn grid_move(cell: usize, dir: usize) -> usize {
    let (r, c) = ((cell / 2) as isize, (cell % 2) as isize);
    let (r2, c2) = match dir {
        0 => (r - 1, c),
        1 => (r + 1, c),
        2 => (r, c - 1),
        3 => (r, c + 1),
        _ => (r, c),
    };
    if (0..2).contains(&r2) && (0..2).contains(&c2) {
        (r2 * 2 + c2) as usize
    } else {
        cell
    }
}

/// Per-agent next-cell distribution: the intended direction with
/// probability 0.6, each other direction and staying put with 0.1.
fn grid_kernel(cell: usize, action: usize) -> [f64; 4] {
    let mut out = [0.0; 4];
    if action == 4 {
        out[cell] = 1.0;
        return out;
    }
    for dir in 0..5 {
        let p = if dir == action { 0.6 } else { 0.1 };
        out[grid_move(cell, dir)] += p;
    }
    out
}

fn meeting_grid<T: Scalar>() -> Result<DecPomdp<T>> {
    let cells = ["nw", "ne", "sw", "se"];
    let states: Vec<String> = (0..16).map(|k| format!("{}-{}", cells[k / 4], cells[k % 4])).collect();
    let mut b = ModelBuilder::<T>::new(
        states,
        vec![labels(&["up", "down", "left", "right", "stay"]); 2],
        vec![labels(&["no-wall", "wall-left", "wall-right", "wall-both"]); 2],
        T::c(DISCOUNT),
    );
    let jas = b.joint_actions.clone();
    let jos = b.joint_observations.clone();
    // walls beside each cell: left column has a wall on the left, right column on the right
    let sense = |cell: usize| if cell % 2 == 0 { 1 } else { 2 };
    for ja in 0..jas.size() {
        let a = jas.decode(ja);
        for s in 0..16 {
            let (c1, c2) = (s / 4, s % 4);
            let k1 = grid_kernel(c1, a[0]);
            let k2 = grid_kernel(c2, a[1]);
            for n1 in 0..4 {
                for n2 in 0..4 {
                    let p = k1[n1] * k2[n2];
                    if p > 0.0 {
                        b.add_transition(ja, s, n1 * 4 + n2, T::c(p));
                    }
                }
            }
            b.set_reward(s, ja, if c1 == c2 { T::one() } else { T::zero() });
            let jo = jos.encode(&[sense(c1), sense(c2)]);
            b.set_observation(ja, s, jo, T::one());
        }
    }
    let mut init = vec![T::zero(); 16];
    init[3] = T::one(); // agent 1 top-left, agent 2 bottom-right
    b.initial = init;
    b.build()
}

// Box pushing on a 4×3 grid. Row 0 is the goal row, row 1 holds a small box
// (column 0), the large box (columns 1–2) and a small box (column 3), and the
// agents live on row 2. Since every cell of row 1 holds a box, the agents
// never leave the bottom row and never pass each other, so agent 1 is always
// strictly left of agent 2: 6 column pairs × 16 headings = 96 states, plus
// 4 transient states recording which boxes reached the goal row (the next
// step resets to the start state).

const NORTH: usize = 0;
const EAST: usize = 1;
const SOUTH: usize = 2;
const WEST: usize = 3;

const TURN_LEFT: usize = 0;
const TURN_RIGHT: usize = 1;
const MOVE: usize = 2;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Pose {
    col: usize,
    heading: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum BoxState {
    Agents(Pose, Pose),
    SmallLeft,
    SmallRight,
    SmallBoth,
    Large,
}

fn box_states() -> Vec<BoxState> {
    let mut out = Vec::with_capacity(100);
    for c1 in 0..4 {
        for c2 in c1 + 1..4 {
            for h1 in 0..4 {
                for h2 in 0..4 {
                    out.push(BoxState::Agents(Pose { col: c1, heading: h1 }, Pose { col: c2, heading: h2 }));
                }
            }
        }
    }
    out.extend([BoxState::SmallLeft, BoxState::SmallRight, BoxState::SmallBoth, BoxState::Large]);
    out
}

fn box_label(s: &BoxState) -> String {
    let h = ['N', 'E', 'S', 'W'];
    match s {
        BoxState::Agents(p, q) => format!("c{}{}-c{}{}", p.col, h[p.heading], q.col, h[q.heading]),
        BoxState::SmallLeft => "goal-small-left".into(),
        BoxState::SmallRight => "goal-small-right".into(),
        BoxState::SmallBoth => "goal-small-both".into(),
        BoxState::Large => "goal-large".into(),
    }
}

/// What an agent sees in the cell in front of it.
fn box_observation(me: Pose, other: Pose) -> usize {
    const EMPTY: usize = 0;
    const WALL: usize = 1;
    const AGENT: usize = 2;
    const SMALL: usize = 3;
    const LARGE: usize = 4;
    match me.heading {
        NORTH => {
            if me.col == 0 || me.col == 3 {
                SMALL
            } else {
                LARGE
            }
        }
        SOUTH => WALL,
        h => {
            let target = if h == EAST { me.col as isize + 1 } else { me.col as isize - 1 };
            if !(0..4).contains(&target) {
                WALL
            } else if target as usize == other.col {
                AGENT
            } else {
                EMPTY
            }
        }
    }
}

fn box_pushing<T: Scalar>() -> Result<DecPomdp<T>> {
    let states = box_states();
    let index = |s: &BoxState| states.iter().position(|x| x == s).expect("enumerated");
    let mut b = ModelBuilder::<T>::new(
        states.iter().map(box_label).collect(),
        vec![labels(&["turn-left", "turn-right", "move", "stay"]); 2],
        vec![labels(&["empty", "wall", "agent", "small-box", "large-box"]); 2],
        T::c(DISCOUNT),
    );
    let jas = b.joint_actions.clone();
    let jos = b.joint_observations.clone();
    let start = index(&BoxState::Agents(Pose { col: 0, heading: EAST }, Pose { col: 3, heading: WEST }));

    for (si, s) in states.iter().enumerate() {
        let BoxState::Agents(p1, p2) = *s else {
            for ja in 0..jas.size() {
                b.set_transition(ja, si, start, T::one());
                b.set_reward(si, ja, T::c(-0.2));
            }
            continue;
        };
        for ja in 0..jas.size() {
            let a = jas.decode(ja);
            let poses = [p1, p2];
            let pushing_north = |i: usize| a[i] == MOVE && poses[i].heading == NORTH;
            let on_large = |i: usize| poses[i].col == 1 || poses[i].col == 2;
            let joint_large = pushing_north(0) && pushing_north(1) && on_large(0) && on_large(1);

            let mut reward = -0.2;
            let mut blocked = [false; 2];
            for i in 0..2 {
                if a[i] != MOVE {
                    continue;
                }
                let other = poses[1 - i];
                blocked[i] = match poses[i].heading {
                    NORTH => on_large(i) && !joint_large,
                    SOUTH => true,
                    h => {
                        let t = if h == EAST { poses[i].col as isize + 1 } else { poses[i].col as isize - 1 };
                        !(0..4).contains(&t) || t as usize == other.col
                    }
                };
                if blocked[i] {
                    reward -= 5.0;
                }
            }

            // enumerate which attempted moves succeed (probability 0.9 each)
            for succ in 0..4usize {
                let ok = [succ & 1 == 1, succ & 2 == 2];
                let mut p = 1.0;
                for i in 0..2 {
                    if a[i] == MOVE && !blocked[i] {
                        p *= if ok[i] { 0.9 } else { 0.1 };
                    } else if ok[i] {
                        p = 0.0;
                    }
                }
                if p == 0.0 {
                    continue;
                }
                let moved = |i: usize| a[i] == MOVE && !blocked[i] && ok[i];
                let next = if joint_large {
                    if moved(0) && moved(1) {
                        reward += p * 100.0;
                        BoxState::Large
                    } else {
                        *s
                    }
                } else {
                    let small = |i: usize| moved(i) && poses[i].heading == NORTH;
                    match (small(0), small(1)) {
                        (true, true) => {
                            reward += p * 20.0;
                            BoxState::SmallBoth
                        }
                        (true, false) | (false, true) => {
                            reward += p * 10.0;
                            // agent 1 can only reach the left small box, agent 2 the right one
                            if small(0) {
                                BoxState::SmallLeft
                            } else {
                                BoxState::SmallRight
                            }
                        }
                        (false, false) => {
                            let mut np = poses;
                            for i in 0..2 {
                                np[i].heading = match a[i] {
                                    TURN_LEFT => (poses[i].heading + 3) % 4,
                                    TURN_RIGHT => (poses[i].heading + 1) % 4,
                                    _ => poses[i].heading,
                                };
                                if moved(i) {
                                    np[i].col = if poses[i].heading == EAST {
                                        poses[i].col + 1
                                    } else {
                                        poses[i].col - 1
                                    };
                                }
                            }
                            if np[0].col == np[1].col {
                                // both entered the same free cell: both stay
                                np[0].col = poses[0].col;
                                np[1].col = poses[1].col;
                            }
                            BoxState::Agents(np[0], np[1])
                        }
                    }
                };
                b.add_transition(ja, si, index(&next), T::c(p));
            }
            b.set_reward(si, ja, T::c(reward));
        }
    }

    for (si, s) in states.iter().enumerate() {
        let jo = match *s {
            BoxState::Agents(p1, p2) => jos.encode(&[box_observation(p1, p2), box_observation(p2, p1)]),
            _ => 0,
        };
        for ja in 0..jas.size() {
            b.set_observation(ja, si, jo, T::one());
        }
    }
    let mut init = vec![T::zero(); states.len()];
    init[start] = T::one();
    b.initial = init;
    b.build()
}

fn correlation_example<T: Scalar>(r: f64) -> Result<DecPomdp<T>> {
    const A: usize = 0;
    const B: usize = 1;
    let mut b = ModelBuilder::<T>::new(
        labels(&["s1", "s2"]),
        vec![labels(&["A", "B"]); 2],
        vec![labels(&["o"]); 2],
        T::c(DISCOUNT),
    );
    let jas = b.joint_actions.clone();
    for ja in 0..jas.size() {
        let a = jas.decode(ja);
        for s in 0..2 {
            let wanted = if s == 0 { A } else { B };
            if a[0] == wanted && a[1] == wanted {
                b.set_reward(s, ja, T::c(r));
                b.set_transition(ja, s, 1 - s, T::one());
            } else {
                b.set_reward(s, ja, T::c(-r));
                b.set_transition(ja, s, s, T::one());
            }
            b.set_observation(ja, s, 0, T::one());
        }
    }
    b.initial = vec![T::one(), T::zero()];
    b.build()
}

/// One-node local controllers driven by a two-node device that flips a
/// fair coin every step: both agents play `A` on signal 0 and `B` on 1.
pub fn correlated_coin_controller<T: Scalar>(model: &DecPomdp<T>) -> Result<JointController<T>> {
    check_correlation_shape(model)?;
    let half = T::c(0.5);
    let device = CorrelationDevice::from_rows(vec![vec![half, half], vec![half, half]])?;
    let mut locals = Vec::new();
    for _ in 0..2 {
        let mut l = LocalController::new(2, 1, 2);
        l.push(Node {
            action: vec![T::one(), T::zero(), T::zero(), T::one()],
            next: vec![vec![(0, T::one())]; 4],
        });
        locals.push(l);
    }
    Ok(JointController { locals, device })
}

/// Two-node deterministic local controllers alternating `A`, `B`, `A`, …
/// with a trivial device.
pub fn alternating_controller<T: Scalar>(model: &DecPomdp<T>) -> Result<JointController<T>> {
    check_correlation_shape(model)?;
    let mut locals = Vec::new();
    for _ in 0..2 {
        let mut l = LocalController::new(2, 1, 1);
        l.push(Node::deterministic(0, &[1], 2, 1));
        l.push(Node::deterministic(1, &[0], 2, 1));
        locals.push(l);
    }
    Ok(JointController {
        locals,
        device: CorrelationDevice::trivial(),
    })
}

fn check_correlation_shape<T: Scalar>(model: &DecPomdp<T>) -> Result<()> {
    let ok = model.num_agents() == 2
        && model.num_states() == 2
        && (0..2).all(|i| model.num_actions(i) == 2 && model.num_observations(i) == 1);
    if ok {
        Ok(())
    } else {
        Err(Error::Precondition("expects the two-state correlation example".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_match_benchmarks() {
        let t: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        assert_eq!((t.num_states(), t.num_actions(0), t.num_observations(1)), (2, 3, 2));
        assert_eq!(t.discount(), 0.9);
        let g: DecPomdp<f64> = builtin_domain("meeting-grid", &[]).unwrap();
        assert_eq!((g.num_states(), g.num_actions(0), g.num_observations(1)), (16, 5, 4));
        let bp: DecPomdp<f64> = builtin_domain("box-pushing", &[]).unwrap();
        assert_eq!((bp.num_states(), bp.num_actions(0), bp.num_observations(1)), (100, 4, 5));
        let c: DecPomdp<f64> = builtin_domain("correlation-example", &[10.0]).unwrap();
        assert_eq!((c.num_states(), c.num_actions(0), c.num_observations(1)), (2, 2, 1));
    }

    #[test]
    fn unknown_and_bad_parameters() {
        assert!(matches!(builtin_domain::<f64>("nope", &[]), Err(Error::UnknownDomain(_))));
        assert!(matches!(
            builtin_domain::<f64>("correlation-example", &[-1.0]),
            Err(Error::InvalidParameter(_))
        ));
        assert!(builtin_domain::<f64>("dec-tiger", &[1.0]).is_err());
    }

    #[test]
    fn correlation_uniform_play_loses_half_r() {
        let m: DecPomdp<f64> = builtin_domain("correlation-example", &[10.0]).unwrap();
        for s in 0..2 {
            let avg: f64 = (0..4).map(|ja| m.reward(s, ja)).sum::<f64>() / 4.0;
            assert!((avg + 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_controllers() {
        use crate::controller::evaluate;
        let m: DecPomdp<f64> = builtin_domain("correlation-example", &[10.0]).unwrap();
        let vt = evaluate(&m, &correlated_coin_controller(&m).unwrap()).unwrap();
        for s in 0..2 {
            let avg = 0.5 * (vt.get(s, 0) + vt.get(s, 1));
            assert!(avg.abs() < 1e-9);
        }
        let vt = evaluate(&m, &alternating_controller(&m).unwrap()).unwrap();
        assert!((vt.get(0, 0) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn tiger_open_left_expected_reward() {
        let m: DecPomdp<f64> = builtin_domain("dec-tiger", &[]).unwrap();
        let ja = m.joint_actions().encode(&[1, 1]);
        let r = 0.5 * m.reward(0, ja) + 0.5 * m.reward(1, ja);
        assert!((r + 15.0).abs() < 1e-12);
        assert_eq!(m.r_max(), 101.0);
    }

    #[test]
    fn box_pushing_states_are_reachable() {
        let m: DecPomdp<f64> = builtin_domain("box-pushing", &[]).unwrap();
        let start = m.initial_belief().iter().position(|&p| p == 1.0).unwrap();
        let mut seen = vec![false; m.num_states()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(s) = stack.pop() {
            for ja in 0..m.joint_actions().size() {
                for &(s2, _) in m.transitions_from(ja, s) {
                    if !seen[s2] {
                        seen[s2] = true;
                        stack.push(s2);
                    }
                }
            }
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn box_pushing_large_box_needs_both() {
        let m: DecPomdp<f64> = builtin_domain("box-pushing", &[]).unwrap();
        let s = m.state_labels().iter().position(|l| l == "c1N-c2N").unwrap();
        let both = m.joint_actions().encode(&[MOVE, MOVE]);
        let large = m.state_labels().iter().position(|l| l == "goal-large").unwrap();
        assert!((m.transition(both, s, large) - 0.81).abs() < 1e-12);
        assert!((m.reward(s, both) - (-0.2 + 81.0)).abs() < 1e-9);
        let alone = m.joint_actions().encode(&[MOVE, 3]);
        assert!((m.reward(s, alone) - (-5.2)).abs() < 1e-12);
    }
}
