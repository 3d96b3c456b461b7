//! Deterministic 2-D block-pushing environment.
//!
//! A circular pusher (position-controlled, velocity-capped) pushes a
//! T-shaped block toward a fixed goal pose inside a 512x512 workspace.
//! Contact is quasi-static: penetration of the pusher disc into the block
//! is projected onto block translation plus a torque about the block
//! centroid. No friction cone, no restitution, no momentum. Everything is
//! a pure function of (seed, action sequence, perturbation schedule), so
//! rollouts replay bit-identically.
//!
//! The task metric is the overlap ratio `sigma` = area(block ∩ goal
//! footprint) / area(block), computed by rasterizing both footprints on a
//! 256x256 grid over their common bounding box. An episode succeeds when
//! `sigma >= 0.95`.

use crate::rng::Rng;

pub const WORKSPACE: f64 = 512.0;
pub const IMG_SIZE: usize = 48;
pub const PUSHER_RADIUS: f64 = 15.0;
pub const PUSHER_VMAX: f64 = 20.0;
pub const SIGMA_SUCCESS: f64 = 0.95;

/// Pixel gray levels, brightest drawn on top.
pub const PX_BG: f64 = 0.0;
pub const PX_GOAL: f64 = 0.3;
pub const PX_BLOCK: f64 = 0.7;
pub const PX_PUSHER: f64 = 1.0;

// T-block geometry: a 120x30 bar with a 30x90 stem below it, expressed in a
// frame whose origin is the area centroid of the union.
const BAR_W: f64 = 120.0;
const BAR_H: f64 = 30.0;
const STEM_W: f64 = 30.0;
const STEM_H: f64 = 90.0;
// centroid offset of the union measured from the bar's top edge
const CENTROID_Y: f64 =
    (BAR_W * BAR_H * (BAR_H / 2.0) + STEM_W * STEM_H * (BAR_H + STEM_H / 2.0))
        / (BAR_W * BAR_H + STEM_W * STEM_H);

/// Axis-aligned rectangle in the block frame.
#[derive(Clone, Copy, Debug)]
struct Rect {
    cx: f64,
    cy: f64,
    hx: f64,
    hy: f64,
}

const fn block_rects() -> [Rect; 2] {
    [
        Rect { cx: 0.0, cy: BAR_H / 2.0 - CENTROID_Y, hx: BAR_W / 2.0, hy: BAR_H / 2.0 },
        Rect { cx: 0.0, cy: BAR_H + STEM_H / 2.0 - CENTROID_Y, hx: STEM_W / 2.0, hy: STEM_H / 2.0 },
    ]
}

pub const BLOCK_AREA: f64 = BAR_W * BAR_H + STEM_W * STEM_H;

/// Radius of the smallest centroid-centered circle containing the block.
pub fn block_circumradius() -> f64 {
    block_rects()
        .iter()
        .map(|r| ((r.cx.abs() + r.hx).powi(2) + (r.cy.abs() + r.hy).powi(2)).sqrt())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta }
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub pusher: [f64; 2],
    pub block: Pose,
    pub step_index: u32,
}

/// What policies see: a scaled low-dimensional state vector and a rendered
/// grayscale image. Both are pure functions of [`EnvState`].
#[derive(Clone, Debug)]
pub struct Observation {
    pub state_vec: [f64; 5],
    pub image: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbKind {
    None,
    Constant,
    Random,
}

impl PerturbKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbKind::None => "none",
            PerturbKind::Constant => "constant",
            PerturbKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(PerturbKind::None),
            "constant" => Some(PerturbKind::Constant),
            "random" => Some(PerturbKind::Random),
            _ => None,
        }
    }
}

/// Per-step offset applied to the block position (never the goal).
#[derive(Clone, Debug)]
pub struct PerturbationSchedule {
    pub kind: PerturbKind,
    pub magnitude: f64,
    pub direction: [f64; 2],
    pub resample_period: u32,
    pub rng_seed: u64,
}

impl PerturbationSchedule {
    pub fn none() -> Self {
        PerturbationSchedule {
            kind: PerturbKind::None,
            magnitude: 0.0,
            direction: [0.0, 0.0],
            resample_period: 50,
            rng_seed: 0,
        }
    }

    pub fn constant(magnitude: f64, direction: [f64; 2]) -> Self {
        let norm = (direction[0] * direction[0] + direction[1] * direction[1]).sqrt();
        assert!(norm > 0.0, "constant perturbation needs a nonzero direction");
        PerturbationSchedule {
            kind: PerturbKind::Constant,
            magnitude,
            direction: [direction[0] / norm, direction[1] / norm],
            resample_period: 50,
            rng_seed: 0,
        }
    }

    pub fn random(magnitude: f64, resample_period: u32, rng_seed: u64) -> Self {
        assert!(resample_period > 0);
        PerturbationSchedule {
            kind: PerturbKind::Random,
            magnitude,
            direction: [0.0, 0.0],
            resample_period,
            rng_seed,
        }
    }

    /// Offset applied while executing step `step_index`. For the random kind
    /// the direction is a pure function of (seed, step_index /
    /// resample_period), redrawn uniformly on the unit circle each period and
    /// fixed in between.
    pub fn offset_at(&self, step_index: u32) -> [f64; 2] {
        match self.kind {
            PerturbKind::None => [0.0, 0.0],
            PerturbKind::Constant => {
                [self.magnitude * self.direction[0], self.magnitude * self.direction[1]]
            }
            PerturbKind::Random => {
                let k = (step_index / self.resample_period) as u64;
                let u = Rng::stream_f64(self.rng_seed, k);
                let angle = 2.0 * std::f64::consts::PI * u;
                [self.magnitude * angle.cos(), self.magnitude * angle.sin()]
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct GoalSpec {
    pub pose: Pose,
    pub threshold: f64,
}

impl Default for GoalSpec {
    fn default() -> Self {
        GoalSpec {
            pose: Pose::new(WORKSPACE / 2.0, WORKSPACE / 2.0, std::f64::consts::FRAC_PI_4),
            threshold: SIGMA_SUCCESS,
        }
    }
}

// ── geometry helpers ───────────────────────────────────────────────────

#[inline]
fn world_to_block(pose: &Pose, p: [f64; 2]) -> [f64; 2] {
    let dx = p[0] - pose.x;
    let dy = p[1] - pose.y;
    let (s, c) = pose.theta.sin_cos();
    [c * dx + s * dy, -s * dx + c * dy]
}

#[inline]
fn block_to_world(pose: &Pose, p: [f64; 2]) -> [f64; 2] {
    let (s, c) = pose.theta.sin_cos();
    [pose.x + c * p[0] - s * p[1], pose.y + s * p[0] + c * p[1]]
}

/// Is a world point inside the block footprint at `pose`?
pub fn point_in_block(pose: &Pose, p: [f64; 2]) -> bool {
    let l = world_to_block(pose, p);
    block_rects()
        .iter()
        .any(|r| (l[0] - r.cx).abs() <= r.hx && (l[1] - r.cy).abs() <= r.hy)
}

/// Signed distance from a local point to one rectangle (negative inside).
fn rect_sdf(r: &Rect, p: [f64; 2]) -> f64 {
    let qx = (p[0] - r.cx).abs() - r.hx;
    let qy = (p[1] - r.cy).abs() - r.hy;
    let ox = qx.max(0.0);
    let oy = qy.max(0.0);
    (ox * ox + oy * oy).sqrt() + qx.max(qy).min(0.0)
}

fn rect_sdf_grad(r: &Rect, p: [f64; 2]) -> [f64; 2] {
    let dx = p[0] - r.cx;
    let dy = p[1] - r.cy;
    let qx = dx.abs() - r.hx;
    let qy = dy.abs() - r.hy;
    if qx > 0.0 || qy > 0.0 {
        let ox = qx.max(0.0) * dx.signum();
        let oy = qy.max(0.0) * dy.signum();
        let n = (ox * ox + oy * oy).sqrt();
        if n == 0.0 {
            return [0.0, 1.0];
        }
        [ox / n, oy / n]
    } else if qx > qy {
        [dx.signum(), 0.0]
    } else {
        [0.0, dy.signum()]
    }
}

/// Signed distance from a world point to the block union (negative inside)
/// and the outward direction at that point.
pub fn block_sdf(pose: &Pose, p: [f64; 2]) -> (f64, [f64; 2]) {
    let l = world_to_block(pose, p);
    let rects = block_rects();
    let d0 = rect_sdf(&rects[0], l);
    let d1 = rect_sdf(&rects[1], l);
    let (d, g) = if d0 <= d1 {
        (d0, rect_sdf_grad(&rects[0], l))
    } else {
        (d1, rect_sdf_grad(&rects[1], l))
    };
    // rotate the local gradient back to world
    let (s, c) = pose.theta.sin_cos();
    (d, [c * g[0] - s * g[1], s * g[0] + c * g[1]])
}

/// World-space corners of both rectangles (8 points), for bounding boxes.
fn block_corners(pose: &Pose) -> [[f64; 2]; 8] {
    let mut out = [[0.0; 2]; 8];
    let mut i = 0;
    for r in block_rects() {
        for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            out[i] = block_to_world(pose, [r.cx + sx * r.hx, r.cy + sy * r.hy]);
            i += 1;
        }
    }
    out
}

// ── overlap metric ─────────────────────────────────────────────────────

const OVERLAP_GRID: usize = 256;

/// Overlap ratio: area(block ∩ goal footprint) / area(block), rasterized on
/// a 256x256 grid over the common bounding box of both footprints.
pub fn overlap(state: &EnvState, goal: &GoalSpec) -> f64 {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in block_corners(&state.block).iter().chain(block_corners(&goal.pose).iter()) {
        lo[0] = lo[0].min(c[0]);
        lo[1] = lo[1].min(c[1]);
        hi[0] = hi[0].max(c[0]);
        hi[1] = hi[1].max(c[1]);
    }
    let dx = (hi[0] - lo[0]) / OVERLAP_GRID as f64;
    let dy = (hi[1] - lo[1]) / OVERLAP_GRID as f64;
    let mut block_cells = 0u64;
    let mut inter_cells = 0u64;
    for iy in 0..OVERLAP_GRID {
        let y = lo[1] + (iy as f64 + 0.5) * dy;
        for ix in 0..OVERLAP_GRID {
            let x = lo[0] + (ix as f64 + 0.5) * dx;
            if point_in_block(&state.block, [x, y]) {
                block_cells += 1;
                if point_in_block(&goal.pose, [x, y]) {
                    inter_cells += 1;
                }
            }
        }
    }
    if block_cells == 0 {
        0.0
    } else {
        inter_cells as f64 / block_cells as f64
    }
}

// ── rendering and observations ─────────────────────────────────────────

/// Top-down 48x48 grayscale raster: background 0.0, goal 0.3, block 0.7,
/// pusher 1.0. Pixel membership is tested at the pixel center with no
/// anti-aliasing, so re-rendering a state is bit-identical.
pub fn render(state: &EnvState, goal: &GoalSpec) -> Vec<f64> {
    let scale = WORKSPACE / IMG_SIZE as f64;
    let r2 = PUSHER_RADIUS * PUSHER_RADIUS;
    let mut img = vec![PX_BG; IMG_SIZE * IMG_SIZE];
    for py in 0..IMG_SIZE {
        let wy = (py as f64 + 0.5) * scale;
        for px in 0..IMG_SIZE {
            let wx = (px as f64 + 0.5) * scale;
            let dpx = wx - state.pusher[0];
            let dpy = wy - state.pusher[1];
            let v = if dpx * dpx + dpy * dpy <= r2 {
                PX_PUSHER
            } else if point_in_block(&state.block, [wx, wy]) {
                PX_BLOCK
            } else if point_in_block(&goal.pose, [wx, wy]) {
                PX_GOAL
            } else {
                PX_BG
            };
            img[py * IMG_SIZE + px] = v;
        }
    }
    img
}

pub fn state_vec(state: &EnvState) -> [f64; 5] {
    let half = WORKSPACE / 2.0;
    let sc = |v: f64| ((v - half) / half).clamp(-1.0, 1.0);
    [
        sc(state.pusher[0]),
        sc(state.pusher[1]),
        sc(state.block.x),
        sc(state.block.y),
        state.block.theta / std::f64::consts::PI,
    ]
}

pub fn observe(state: &EnvState, goal: &GoalSpec) -> Observation {
    Observation { state_vec: state_vec(state), image: render(state, goal) }
}

// ── the environment ────────────────────────────────────────────────────

/// Squared radius of gyration of the T footprint (second area moment over
/// area), which sets how penetration splits between block translation and
/// rotation about the centroid.
pub const BLOCK_GYRADIUS_SQ: f64 = 1931.9;
const CONTACT_ITERS: usize = 4;
const SUBSTEP_LEN: f64 = 5.0;

#[derive(Clone, Debug)]
pub struct PushTEnv {
    pub state: EnvState,
    pub goal: GoalSpec,
    pub perturb: PerturbationSchedule,
}

impl PushTEnv {
    /// Seeded reset: block pose and pusher position drawn inside workspace
    /// margins, rejecting draws that already satisfy the goal or start the
    /// pusher in contact. The goal pose is fixed by the task definition.
    pub fn reset(seed: u64, perturb: PerturbationSchedule) -> (Self, Observation) {
        let goal = GoalSpec::default();
        let mut rng = Rng::new(seed ^ 0x7075_7368_745f_7631);
        let margin = block_circumradius() + 20.0;
        let state = loop {
            let block = Pose::new(
                rng.range(margin, WORKSPACE - margin),
                rng.range(margin, WORKSPACE - margin),
                wrap_angle(rng.range(-std::f64::consts::PI, std::f64::consts::PI)),
            );
            let pusher = [
                rng.range(PUSHER_RADIUS + 5.0, WORKSPACE - PUSHER_RADIUS - 5.0),
                rng.range(PUSHER_RADIUS + 5.0, WORKSPACE - PUSHER_RADIUS - 5.0),
            ];
            let candidate = EnvState { pusher, block, step_index: 0 };
            let (sd, _) = block_sdf(&block, pusher);
            if sd < PUSHER_RADIUS + 5.0 {
                continue; // pusher starting in or touching the block
            }
            if overlap(&candidate, &goal) >= goal.threshold {
                continue; // already solved at t=0
            }
            break candidate;
        };
        let obs = observe(&state, &goal);
        (PushTEnv { state, goal, perturb }, obs)
    }

    /// One control step: move the pusher toward `action` (a target position,
    /// capped at [`PUSHER_VMAX`]), resolve quasi-static contact along the
    /// way, then apply the scheduled perturbation offset to the block.
    pub fn step(&mut self, action: [f64; 2]) -> Observation {
        assert!(
            action[0].is_finite() && action[1].is_finite(),
            "non-finite action {action:?}"
        );
        let target = [action[0].clamp(0.0, WORKSPACE), action[1].clamp(0.0, WORKSPACE)];
        let dx = target[0] - self.state.pusher[0];
        let dy = target[1] - self.state.pusher[1];
        let dist = (dx * dx + dy * dy).sqrt();
        let (mx, my) = if dist > PUSHER_VMAX {
            (dx / dist * PUSHER_VMAX, dy / dist * PUSHER_VMAX)
        } else {
            (dx, dy)
        };
        let move_len = (mx * mx + my * my).sqrt();
        let n_sub = (move_len / SUBSTEP_LEN).ceil().max(1.0) as usize;
        for _ in 0..n_sub {
            self.state.pusher = [
                (self.state.pusher[0] + mx / n_sub as f64).clamp(0.0, WORKSPACE),
                (self.state.pusher[1] + my / n_sub as f64).clamp(0.0, WORKSPACE),
            ];
            self.resolve_contact();
        }

        let off = self.perturb.offset_at(self.state.step_index);
        self.state.block.x += off[0];
        self.state.block.y += off[1];
        self.state.step_index += 1;
        observe(&self.state, &self.goal)
    }

    /// Project pusher-disc penetration onto block translation plus rotation
    /// about the centroid. The split follows the least-norm resolution of
    /// the contact constraint `n . dx + (r x n) dtheta = depth` weighted by
    /// the footprint's radius of gyration; iterated a fixed number of times
    /// so the result is a pure function of the pre-step state.
    fn resolve_contact(&mut self) {
        for _ in 0..CONTACT_ITERS {
            let (sd, n) = block_sdf(&self.state.block, self.state.pusher);
            let depth = PUSHER_RADIUS - sd;
            if depth <= 0.0 {
                break;
            }
            // contact point on the block surface under the pusher
            let cp = [
                self.state.pusher[0] - n[0] * sd,
                self.state.pusher[1] - n[1] * sd,
            ];
            let rx = cp[0] - self.state.block.x;
            let ry = cp[1] - self.state.block.y;
            // lever of the contact normal about the centroid (z of r x n,
            // with the force acting along -n)
            let lever = ry * n[0] - rx * n[1];
            let denom = BLOCK_GYRADIUS_SQ + lever * lever;
            let dx = depth * BLOCK_GYRADIUS_SQ / denom;
            let dth = depth * lever / denom;
            self.state.block.x -= n[0] * dx;
            self.state.block.y -= n[1] * dx;
            self.state.block.theta = wrap_angle(self.state.block.theta + dth);
        }
    }

    pub fn overlap(&self) -> f64 {
        overlap(&self.state, &self.goal)
    }

    pub fn observe(&self) -> Observation {
        observe(&self.state, &self.goal)
    }

    pub fn succeeded(&self) -> bool {
        success_possible(&self.state, &self.goal) && self.overlap() >= self.goal.threshold
    }
}

/// Cheap necessary condition for `sigma >= threshold`; lets rollout loops
/// skip the rasterization while the block is far from the goal. A centroid
/// offset of `d` loses at least `d * min_width / area` of overlap, so large
/// offsets cannot reach a high threshold.
pub fn success_possible(state: &EnvState, goal: &GoalSpec) -> bool {
    let dx = state.block.x - goal.pose.x;
    let dy = state.block.y - goal.pose.y;
    dx * dx + dy * dy <= 40.0 * 40.0
}

// ── trajectory log ─────────────────────────────────────────────────────

/// One rollout step for the CSV trajectory log.
#[derive(Clone, Debug)]
pub struct TrajStep {
    pub step_index: u32,
    pub state: EnvState,
    pub action: [f64; 2],
    pub sigma: f64,
    pub perturb: [f64; 2],
}

/// Trajectory log: an episode header line carrying the seed and schedule,
/// a column header, then one record per step.
pub fn write_trajectory(
    path: &std::path::Path,
    seed: u64,
    schedule: &PerturbationSchedule,
    steps: &[TrajStep],
) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "# seed={} kind={} magnitude={} dir=({},{}) period={} perturb_seed={}",
        seed,
        schedule.kind.as_str(),
        schedule.magnitude,
        schedule.direction[0],
        schedule.direction[1],
        schedule.resample_period,
        schedule.rng_seed
    )?;
    writeln!(
        f,
        "step,pusher_x,pusher_y,block_x,block_y,block_theta,action_x,action_y,sigma,perturb_x,perturb_y"
    )?;
    for s in steps {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.step_index,
            s.state.pusher[0],
            s.state.pusher[1],
            s.state.block.x,
            s.state.block.y,
            s.state.block.theta,
            s.action[0],
            s.action[1],
            s.sigma,
            s.perturb[0],
            s.perturb[1]
        )?;
    }
    Ok(())
}
