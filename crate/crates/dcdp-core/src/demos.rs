//! Scripted demonstration expert and dataset generation.
//!
//! The expert is a waypoint controller: it picks a contact point on the
//! block boundary opposite the desired block motion, approaches it without
//! cutting through the block, then pushes through the contact toward the
//! goal. A small lateral offset of the push line steers block rotation;
//! when position error is small it switches to tangential pushes at the bar
//! ends to fix the remaining angle. Seeded waypoint jitter (±3 units) makes
//! the recorded data mildly multi-modal.
//!
//! Episodes store environment states and actions only; observations are
//! re-derived on demand (they are pure functions of state), which keeps the
//! dataset file small and the replay check meaningful.

use crate::checkpoint::{fnv1a, FormatError};
use crate::env::{
    self, block_circumradius, block_sdf, observe, EnvState, GoalSpec, Observation,
    PerturbationSchedule, Pose, PushTEnv, PUSHER_RADIUS, WORKSPACE,
};
use crate::rng::Rng;
use std::io::{Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 8] = b"DCDPDEMO";
pub const DATASET_VERSION: u32 = 1;

/// Maximum episode length, matching the evaluation protocol.
pub const T_MAX: u32 = 300;

#[derive(Clone, Debug)]
pub struct Episode {
    pub seed: u64,
    /// state before each action; `states[i]` pairs with `actions[i]`
    pub states: Vec<EnvState>,
    pub actions: Vec<[f64; 2]>,
    /// overlap ratio when the episode ended
    pub sigma: f64,
    pub success: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, t: usize, goal: &GoalSpec) -> Observation {
        observe(&self.states[t], goal)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
    pub a_min: [f64; 2],
    pub a_max: [f64; 2],
}

impl Dataset {
    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }
}

// ── scripted expert ─────────────────────────────────────────────────────

const GAP: f64 = 1.0;
const NEAR: f64 = 14.0;
const PUSH_DEPTH: f64 = 18.0;
const PUSH_DEPTH_ROT: f64 = 9.0;
const POS_FINE: f64 = 22.0;
const TH_FINE: f64 = 0.028;
const ROT_OFFSET_GAIN: f64 = 60.0;
const ROT_OFFSET_MAX: f64 = 34.0;
const AVOID_CLEARANCE: f64 = 6.0;

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n == 0.0 {
        [1.0, 0.0]
    } else {
        [v[0] / n, v[1] / n]
    }
}

fn perp(v: [f64; 2]) -> [f64; 2] {
    [-v[1], v[0]]
}

fn norm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Walk from `c0` (a point inside the block) backward along `-d` until the
/// pusher disc would just clear the surface, refining by bisection. Returns
/// the staging point where a disc centered there touches the block with a
/// small gap.
fn cast_contact(pose: &Pose, c0: [f64; 2], d: [f64; 2]) -> [f64; 2] {
    let want = PUSHER_RADIUS + GAP;
    let at = |t: f64| [c0[0] - d[0] * t, c0[1] - d[1] * t];
    let mut t_hi = 2.0;
    while block_sdf(pose, at(t_hi)).0 < want && t_hi < 220.0 {
        t_hi += 2.0;
    }
    let mut lo = (t_hi - 2.0).max(0.0);
    let mut hi = t_hi;
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        if block_sdf(pose, at(mid)).0 < want {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

/// Would a pusher disc sweeping the straight segment a->b cut into the
/// block? The last few units before `b` are excluded: approach targets are
/// staging points constructed to just touch the surface.
pub fn segment_hits_block(pose: &Pose, a: [f64; 2], b: [f64; 2]) -> bool {
    let len = norm([b[0] - a[0], b[1] - a[1]]);
    let steps = (len / 2.0).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let f = i as f64 / steps as f64;
        if len * (1.0 - f) < 7.0 {
            break;
        }
        let p = [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
        let (sd, _) = block_sdf(pose, p);
        if sd < PUSHER_RADIUS + 1.5 {
            return true;
        }
    }
    false
}

/// Route toward `target` (a staging point at the block surface): go straight
/// when the pusher is already on target's side of the block, otherwise walk
/// an avoidance circle around the block with angularly monotone steps. The
/// monotone arc makes the routing free of direct/detour limit cycles.
fn route_waypoint(pose: &Pose, pusher: [f64; 2], target: [f64; 2]) -> [f64; 2] {
    let center = [pose.x, pose.y];
    let a_p = (pusher[1] - center[1]).atan2(pusher[0] - center[0]);
    let a_t = (target[1] - center[1]).atan2(target[0] - center[0]);
    let diff = env::wrap_angle(a_t - a_p);
    if diff.abs() <= 0.45 && !segment_hits_block(pose, pusher, target) {
        return target;
    }
    let r_orbit = block_circumradius() + PUSHER_RADIUS + AVOID_CLEARANCE;
    let orbit = |a: f64| {
        [
            (center[0] + r_orbit * a.cos()).clamp(5.0, WORKSPACE - 5.0),
            (center[1] + r_orbit * a.sin()).clamp(5.0, WORKSPACE - 5.0),
        ]
    };
    let wp = orbit(a_p + diff.clamp(-0.4, 0.4));
    if norm([wp[0] - pusher[0], wp[1] - pusher[1]]) < 2.0 {
        // parked at the target angle but the final hop is blocked: keep
        // circling so the controller can never freeze
        return orbit(a_p + 0.4);
    }
    wp
}

/// Go to a staging point behind `contact`, routing around the block if
/// needed; once roughly on the push line, push through along `push_dir`.
fn approach_or_push(
    pose: &Pose,
    pusher: [f64; 2],
    contact: [f64; 2],
    push_dir: [f64; 2],
    depth: f64,
) -> [f64; 2] {
    let rel = [pusher[0] - contact[0], pusher[1] - contact[1]];
    let along = rel[0] * push_dir[0] + rel[1] * push_dir[1];
    let lat = rel[0] * -push_dir[1] + rel[1] * push_dir[0];
    if along >= -NEAR && along <= depth + 8.0 && lat.abs() <= NEAR {
        // aligned with the push line: drive through the contact
        return [contact[0] + push_dir[0] * depth, contact[1] + push_dir[1] * depth];
    }
    let staging = [contact[0] - push_dir[0] * 8.0, contact[1] - push_dir[1] * 8.0];
    route_waypoint(pose, pusher, staging)
}

/// A contact is approachable when backing away from it along `-d` keeps the
/// pusher clear of the block; casts that land inside the bar-stem pocket
/// fail this and are heavily penalized by the candidate scoring.
fn contact_reachable(pose: &Pose, contact: [f64; 2], d: [f64; 2]) -> bool {
    let s8 = block_sdf(pose, [contact[0] - d[0] * 8.0, contact[1] - d[1] * 8.0]).0;
    let s26 = block_sdf(pose, [contact[0] - d[0] * 26.0, contact[1] - d[1] * 26.0]).0;
    s8 >= PUSHER_RADIUS && s26 >= PUSHER_RADIUS + 6.0
}

/// Simulate one push through the real contact physics: teleport a virtual
/// pusher to `contact`, drive it `depth` along `dir`, and return the block
/// pose that results. Pure, so the expert stays a function of (state, goal).
fn probe_push(block: Pose, contact: [f64; 2], dir: [f64; 2], depth: f64) -> Pose {
    let mut env = PushTEnv {
        state: EnvState { pusher: contact, block, step_index: 0 },
        goal: GoalSpec::default(),
        perturb: PerturbationSchedule::none(),
    };
    env.step([contact[0] + dir[0] * depth, contact[1] + dir[1] * depth]);
    env.state.block
}

/// Deterministic expert action: a target position for the pusher.
pub fn expert_action(state: &EnvState, goal: &GoalSpec) -> [f64; 2] {
    let b = &state.block;
    let e_pos = [goal.pose.x - b.x, goal.pose.y - b.y];
    let dist = norm(e_pos);
    let e_th = env::wrap_angle(goal.pose.theta - b.theta);
    if dist < 0.8 && e_th.abs() < 0.015 {
        return state.pusher; // hold: block is at the goal
    }

    if (dist <= POS_FINE && e_th.abs() > TH_FINE) || e_th.abs() > 0.55 {
        // rotate in place: tangential pushes near the bar ends; probe all
        // four (end x direction) candidates and take the one that actually
        // improves the angle most per unit of position damage
        let (s, c) = b.theta.sin_cos();
        let cy = (120.0 * 30.0 * 15.0 + 30.0 * 90.0 * 75.0) / (120.0 * 30.0 + 30.0 * 90.0);
        let bar_y = 15.0 - cy; // bar center height in the centroid frame
        let rot_depth = (e_th.abs() / 0.011).clamp(1.5, PUSH_DEPTH_ROT);
        let mut best: Option<([f64; 2], [f64; 2], f64)> = None;
        for lx in [-50.0, 50.0] {
            let lever = [b.x + c * lx - s * bar_y, b.y + s * lx + c * bar_y];
            let r = unit([lever[0] - b.x, lever[1] - b.y]);
            for sign in [1.0, -1.0] {
                let tau = [sign * -r[1], sign * r[0]];
                let contact = cast_contact(b, lever, tau);
                let next = probe_push(*b, contact, tau, rot_depth);
                let e_next = env::wrap_angle(goal.pose.theta - next.theta).abs();
                let dist_next = norm([goal.pose.x - next.x, goal.pose.y - next.y]);
                let travel =
                    norm([contact[0] - state.pusher[0], contact[1] - state.pusher[1]]);
                let mut score = 100.0 * e_next + dist_next + 0.03 * travel;
                if travel < 26.0 {
                    score -= 8.0;
                }
                let moved = norm([next.x - b.x, next.y - b.y])
                    + 30.0 * env::wrap_angle(next.theta - b.theta).abs();
                if moved < 0.25 * rot_depth {
                    score += 50.0; // grazing cast, push does nothing
                }
                if !contact_reachable(b, contact, tau) {
                    score += 800.0;
                }
                if best.is_none() || score < best.unwrap().2 {
                    best = Some((contact, tau, score));
                }
            }
        }
        let (contact, tau, _) = best.unwrap();
        return approach_or_push(b, state.pusher, contact, tau, rot_depth);
    }

    // translate toward the goal, pushing along a line offset from the
    // centroid; probe candidate (offset, direction) pushes through the real
    // contact physics and keep the one that best fixes pose error. The
    // direction fan matters close in, where the realized displacement
    // follows the contact normal rather than the aim direction.
    let d0 = unit(e_pos);
    let off_mag = (ROT_OFFSET_GAIN * e_th.abs()).clamp(0.0, ROT_OFFSET_MAX);
    let depth = if dist < POS_FINE {
        (dist * 0.85).clamp(1.0, PUSH_DEPTH)
    } else {
        PUSH_DEPTH
    };
    let dir_fan: &[f64] = if dist < 8.0 {
        &[0.0, 0.35, -0.35, 0.75, -0.75, 1.15, -1.15]
    } else {
        &[0.0, 0.35, -0.35]
    };
    let mut best: Option<([f64; 2], [f64; 2], f64)> = None;
    for rot in dir_fan {
        let (sn, cs) = rot.sin_cos();
        let d = [cs * d0[0] - sn * d0[1], sn * d0[0] + cs * d0[1]];
        let p = perp(d);
        for off0 in [off_mag, -off_mag] {
            // keep the push line anchored inside the block
            let mut off = off0;
            let mut anchor = [b.x + p[0] * off, b.y + p[1] * off];
            for _ in 0..8 {
                if block_sdf(b, anchor).0 < -4.0 {
                    break;
                }
                off *= 0.6;
                anchor = [b.x + p[0] * off, b.y + p[1] * off];
            }
            let contact = cast_contact(b, anchor, d);
            let next = probe_push(*b, contact, d, depth);
            let e_th_next = env::wrap_angle(goal.pose.theta - next.theta).abs();
            let dist_next = norm([goal.pose.x - next.x, goal.pose.y - next.y]);
            let travel = norm([contact[0] - state.pusher[0], contact[1] - state.pusher[1]]);
            // the travel term latches the choice to the pusher's current
            // side, and an engagement bonus pins it once the pusher is
            // already working this contact; both keep the state-to-action
            // mapping consistent along a trajectory
            let mut score = dist_next + 70.0 * e_th_next + 0.03 * travel;
            if travel < 26.0 {
                score -= 8.0;
            }
            let moved = norm([next.x - b.x, next.y - b.y])
                + 30.0 * env::wrap_angle(next.theta - b.theta).abs();
            if moved < 0.25 * depth {
                score += 50.0; // grazing cast, push does nothing
            }
            if !contact_reachable(b, contact, d) {
                score += 800.0;
            }
            if best.is_none() || score < best.unwrap().2 {
                best = Some((contact, d, score));
            }
            if off_mag == 0.0 {
                break;
            }
        }
    }
    let (mut contact, chosen_d, _) = best.unwrap();
    let mut push_dir = chosen_d;
    let m = PUSHER_RADIUS + 2.0;
    if contact[0] < m
        || contact[0] > WORKSPACE - m
        || contact[1] < m
        || contact[1] > WORKSPACE - m
    {
        // staging is unreachable against a wall: push the block toward the
        // workspace center to free it first
        let to_center = unit([WORKSPACE / 2.0 - b.x, WORKSPACE / 2.0 - b.y]);
        contact = cast_contact(b, [b.x, b.y], to_center);
        push_dir = to_center;
    }
    approach_or_push(b, state.pusher, contact, push_dir, depth)
}

// ── rollout and dataset generation ─────────────────────────────────────

/// Run the jittered expert in a fresh environment. Returns the episode
/// (which may or may not have succeeded).
pub fn expert_rollout(seed: u64, jitter: f64, t_max: u32) -> Episode {
    let (mut env, _) = PushTEnv::reset(seed, PerturbationSchedule::none());
    let mut jrng = Rng::new(seed ^ 0x6a69_7474_6572_0001);
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut success = false;
    for _ in 0..t_max {
        let base = expert_action(&env.state, &env.goal);
        let holding = base == env.state.pusher;
        let a = if holding || jitter == 0.0 {
            base
        } else {
            [
                (base[0] + jrng.range(-jitter, jitter)).clamp(0.0, WORKSPACE),
                (base[1] + jrng.range(-jitter, jitter)).clamp(0.0, WORKSPACE),
            ]
        };
        states.push(env.state);
        actions.push(a);
        env.step(a);
        if env.succeeded() {
            success = true;
            break;
        }
    }
    Episode { seed, states, actions, sigma: env.overlap(), success }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("expert reached only {got}/{want} successes within {attempts} attempts")]
    TooManyFailures { got: usize, want: usize, attempts: usize },
}

/// Collect `n` successful expert episodes (failures discarded and re-seeded)
/// and compute per-dimension action bounds.
pub fn generate(n: usize, seed: u64, jitter: f64) -> Result<Dataset, GenerateError> {
    assert!(n >= 1);
    let mut episodes = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let mut k = 0u64;
    while episodes.len() < n {
        if attempts >= 10 * n {
            return Err(GenerateError::TooManyFailures {
                got: episodes.len(),
                want: n,
                attempts,
            });
        }
        let ep_seed = Rng::new(seed).derive(k).next_u64();
        k += 1;
        attempts += 1;
        let ep = expert_rollout(ep_seed, jitter, T_MAX);
        if ep.success {
            episodes.push(ep);
        }
    }
    let mut a_min = [f64::INFINITY; 2];
    let mut a_max = [f64::NEG_INFINITY; 2];
    for ep in &episodes {
        for a in &ep.actions {
            for d in 0..2 {
                a_min[d] = a_min[d].min(a[d]);
                a_max[d] = a_max[d].max(a[d]);
            }
        }
    }
    Ok(Dataset { episodes, a_min, a_max })
}

// ── binary dataset format ───────────────────────────────────────────────
//
// offset  size  field
// 0       8     magic b"DCDPDEMO"
// 8       4     version (u32 LE) = 1
// 12      4     episode count (u32 LE)
// 16      16    a_min (2 x f64 LE)
// 32      16    a_max (2 x f64 LE)
// then per episode:
//         8     seed (u64)
//         4     step count (u32)
//         1     success flag (u8)
//         8     terminal sigma (f64)
//         per step: pusher x,y; block x,y,theta; action x,y (7 x f64 LE)

pub fn save(ds: &Dataset, path: &Path) -> Result<(), FormatError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.episodes.len() as u32).to_le_bytes());
    for v in ds.a_min.iter().chain(ds.a_max.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for ep in &ds.episodes {
        buf.extend_from_slice(&ep.seed.to_le_bytes());
        buf.extend_from_slice(&(ep.len() as u32).to_le_bytes());
        buf.push(ep.success as u8);
        buf.extend_from_slice(&ep.sigma.to_le_bytes());
        for (st, a) in ep.states.iter().zip(&ep.actions) {
            for v in [
                st.pusher[0],
                st.pusher[1],
                st.block.x,
                st.block.y,
                st.block.theta,
                a[0],
                a[1],
            ] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset, FormatError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = std::io::Cursor::new(bytes.as_slice());

    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(|_| FormatError::Truncated("magic".into()))?;
    if &magic != DATASET_MAGIC {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let version = read_u32(&mut cur)?;
    if version != DATASET_VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let n_eps = read_u32(&mut cur)? as usize;
    let mut a_min = [0.0; 2];
    let mut a_max = [0.0; 2];
    for v in a_min.iter_mut().chain(a_max.iter_mut()) {
        *v = read_f64(&mut cur)?;
    }
    let mut episodes = Vec::with_capacity(n_eps);
    for _ in 0..n_eps {
        let seed = read_u64(&mut cur)?;
        let n_steps = read_u32(&mut cur)? as usize;
        let mut flag = [0u8; 1];
        cur.read_exact(&mut flag).map_err(|_| FormatError::Truncated("success flag".into()))?;
        let sigma = read_f64(&mut cur)?;
        let mut states = Vec::with_capacity(n_steps);
        let mut actions = Vec::with_capacity(n_steps);
        for i in 0..n_steps {
            let px = read_f64(&mut cur)?;
            let py = read_f64(&mut cur)?;
            let bx = read_f64(&mut cur)?;
            let by = read_f64(&mut cur)?;
            let th = read_f64(&mut cur)?;
            let ax = read_f64(&mut cur)?;
            let ay = read_f64(&mut cur)?;
            states.push(EnvState {
                pusher: [px, py],
                block: Pose::new(bx, by, th),
                step_index: i as u32,
            });
            actions.push([ax, ay]);
        }
        episodes.push(Episode { seed, states, actions, sigma, success: flag[0] != 0 });
    }
    Ok(Dataset { episodes, a_min, a_max })
}

fn read_u32(cur: &mut std::io::Cursor<&[u8]>) -> Result<u32, FormatError> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(|_| FormatError::Truncated("u32".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut std::io::Cursor<&[u8]>) -> Result<u64, FormatError> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b).map_err(|_| FormatError::Truncated("u64".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(cur: &mut std::io::Cursor<&[u8]>) -> Result<f64, FormatError> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b).map_err(|_| FormatError::Truncated("f64".into()))?;
    Ok(f64::from_le_bytes(b))
}

/// Content hash used by determinism checks.
pub fn dataset_checksum(ds: &Dataset) -> u64 {
    let mut buf = Vec::new();
    for v in ds.a_min.iter().chain(ds.a_max.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for ep in &ds.episodes {
        buf.extend_from_slice(&ep.seed.to_le_bytes());
        for (st, a) in ep.states.iter().zip(&ep.actions) {
            for v in [st.pusher[0], st.pusher[1], st.block.x, st.block.y, st.block.theta, a[0], a[1]] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fnv1a(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expert_holds_at_goal() {
        let goal = GoalSpec::default();
        let state = EnvState {
            pusher: [100.0, 100.0],
            block: goal.pose,
            step_index: 0,
        };
        assert_eq!(expert_action(&state, &goal), [100.0, 100.0]);
    }

    #[test]
    fn approach_never_cuts_through_block() {
        // block left of goal, pusher further left: the approach waypoint
        // stays on the pusher's side and the segment misses the block
        let goal = GoalSpec::default();
        let block = Pose::new(goal.pose.x - 150.0, goal.pose.y, goal.pose.theta);
        let pusher = [block.x - block_circumradius() - 40.0, goal.pose.y];
        let state = EnvState { pusher, block, step_index: 0 };
        let wp = expert_action(&state, &goal);
        assert!(
            wp[0] < block.x,
            "waypoint should stay on the near side of the block: {wp:?}"
        );
        assert!(
            !segment_hits_block(&block, state.pusher, wp),
            "approach segment must not cross the block"
        );
    }

    #[test]
    fn expert_success_rate_gate() {
        let mut ok = 0;
        let mut steps_sum = 0usize;
        for seed in 0..100u64 {
            let ep = expert_rollout(seed.wrapping_mul(0x9e37) ^ 0x517c, 0.0, T_MAX);
            if ep.success {
                ok += 1;
                steps_sum += ep.len();
            }
        }
        assert!(ok >= 90, "expert succeeded only {ok}/100 (mean steps {})",
            steps_sum.checked_div(ok.max(1)).unwrap_or(0));
    }

    #[test]
    fn generate_is_deterministic_and_bounded() {
        let d1 = generate(3, 1, 3.0).unwrap();
        let d2 = generate(3, 1, 3.0).unwrap();
        assert_eq!(dataset_checksum(&d1), dataset_checksum(&d2));
        assert!(d1.episodes.iter().all(|e| e.success));
        for ep in &d1.episodes {
            for a in &ep.actions {
                for d in 0..2 {
                    assert!(a[d] >= d1.a_min[d] && a[d] <= d1.a_max[d]);
                }
            }
        }
        assert!(d1.a_min[0] < d1.a_max[0] && d1.a_min[1] < d1.a_max[1]);
    }

    #[test]
    fn replay_reproduces_states_bit_exactly() {
        let ds = generate(2, 7, 3.0).unwrap();
        for ep in &ds.episodes {
            let (mut env, _) = PushTEnv::reset(ep.seed, PerturbationSchedule::none());
            for (t, a) in ep.actions.iter().enumerate() {
                assert_eq!(env.state, ep.states[t], "episode {} diverged at step {t}", ep.seed);
                env.step(*a);
            }
            assert!(env.succeeded());
        }
    }

    #[test]
    fn save_load_round_trip() {
        let ds = generate(2, 3, 3.0).unwrap();
        let dir = std::env::temp_dir().join("dcdp_demo_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("demos.bin");
        save(&ds, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(dataset_checksum(&ds), dataset_checksum(&loaded));
        assert_eq!(ds.a_min, loaded.a_min);
        assert_eq!(ds.a_max, loaded.a_max);

        // corrupt the magic
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'Z';
        let bad = dir.join("bad.bin");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load(&bad), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn file_size_linear_in_steps() {
        let ds1 = generate(1, 11, 3.0).unwrap();
        let ds2 = generate(2, 11, 3.0).unwrap();
        let dir = std::env::temp_dir().join("dcdp_demo_size");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("one.bin");
        let p2 = dir.join("two.bin");
        save(&ds1, &p1).unwrap();
        save(&ds2, &p2).unwrap();
        let header = 8 + 4 + 4 + 32;
        let per_ep = 8 + 4 + 1 + 8;
        let s1 = std::fs::metadata(&p1).unwrap().len() as usize;
        let s2 = std::fs::metadata(&p2).unwrap().len() as usize;
        assert_eq!(s1, header + per_ep + ds1.total_steps() * 56);
        assert_eq!(s2, header + 2 * per_ep + ds2.total_steps() * 56);
    }

    #[test]
    fn workspace_coverage_of_actions() {
        let ds = generate(40, 5, 3.0).unwrap();
        let mut cells = [[false; 8]; 8];
        for ep in &ds.episodes {
            for a in &ep.actions {
                let cx = ((a[0] / WORKSPACE * 8.0) as usize).min(7);
                let cy = ((a[1] / WORKSPACE * 8.0) as usize).min(7);
                cells[cy][cx] = true;
            }
        }
        let visited: usize = cells.iter().flatten().filter(|&&v| v).count();
        assert!(visited * 100 >= 64 * 80, "covered only {visited}/64 cells");
    }
}
