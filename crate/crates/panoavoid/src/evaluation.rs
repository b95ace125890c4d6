//! Benchmark tasks, success-rate and collision-time metrics, and the
//! robustness sweeps over depth noise, obstacle size, and commanded heading.

use std::path::Path;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{clip_norm, sample_dt, step, SimConfig, UavState};
use crate::geometry::Vec3;
use crate::objective::LossConfig;
use crate::policy::{build_observation_tape, PolicyNet};
use crate::scalar::Scalar;
use crate::tensor::checkpoint::CheckpointError;
use crate::tensor::Tape;
use crate::training::{render_policy_input, sample_goal};
use crate::world::{clearance, spawn_task_scene, step_obstacles, Scene, TaskKind};

/// Piecewise-linear path parameterized by arc length.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pts: Vec<Vec3<f64>>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(pts: Vec<Vec3<f64>>) -> Self {
        assert!(!pts.is_empty(), "a path needs at least one waypoint");
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            let seg = (w[1] - w[0]).norm();
            cum.push(cum.last().unwrap() + seg);
        }
        Polyline { pts, cum }
    }

    pub fn total_length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Point at arc length `s`, clamped to the path ends.
    pub fn at(&self, s: f64) -> Vec3<f64> {
        if s <= 0.0 || self.pts.len() == 1 {
            return self.pts[0];
        }
        if s >= self.total_length() {
            return *self.pts.last().unwrap();
        }
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let seg = self.cum[i + 1] - self.cum[i];
        if seg <= 0.0 {
            return self.pts[i];
        }
        let f = (s - self.cum[i]) / seg;
        self.pts[i] + (self.pts[i + 1] - self.pts[i]).scale(f)
    }

    /// Unit tangent of the segment containing `s`; the last segment's tangent
    /// past the end, +x for degenerate paths.
    pub fn heading(&self, s: f64) -> Vec3<f64> {
        let fallback = Vec3::new(1.0, 0.0, 0.0);
        if self.pts.len() == 1 {
            return fallback;
        }
        let mut i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        i = i.min(self.pts.len() - 2);
        for j in (0..=i).rev().chain(i + 1..self.pts.len() - 1) {
            let d = self.pts[j + 1] - self.pts[j];
            if d.norm() > 1e-12 {
                return d.normalized();
            }
        }
        fallback
    }
}

/// What the UAV is asked to do for one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskGoal {
    /// Hold a fixed position with a commanded heading.
    Hover { anchor: Vec3<f64>, psi_c: f64 },
    /// Stay a fixed offset ahead of a moving target whose position is known.
    Follow { path: Vec<Vec3<f64>>, target_speed: f64, offset: f64 },
    /// Track waypoints while keeping the camera on a subject.
    Film { waypoints: Vec<Vec3<f64>>, subject: Vec3<f64>, path_speed: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub goal: TaskGoal,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_r_uav")]
    pub r_uav: f64,
    #[serde(default = "default_d_max")]
    pub d_max: f64,
    pub obstacle_density: usize,
    pub obstacle_speed: f64,
    #[serde(default = "default_obstacle_size")]
    pub obstacle_size: f64,
}

fn default_duration() -> f64 {
    120.0
}
fn default_r_uav() -> f64 {
    0.2
}
fn default_d_max() -> f64 {
    30.0
}
fn default_obstacle_size() -> f64 {
    0.5
}

/// World-box center used as the default station-keeping point.
pub const DEFAULT_ANCHOR: [f64; 3] = [0.0, 0.0, 4.0];

impl TaskSpec {
    pub fn hover(psi_c: f64, obstacle_density: usize, obstacle_speed: f64) -> Self {
        TaskSpec {
            goal: TaskGoal::Hover {
                anchor: Vec3::new(DEFAULT_ANCHOR[0], DEFAULT_ANCHOR[1], DEFAULT_ANCHOR[2]),
                psi_c,
            },
            duration: default_duration(),
            r_uav: default_r_uav(),
            d_max: default_d_max(),
            obstacle_density,
            obstacle_speed,
            obstacle_size: default_obstacle_size(),
        }
    }

    pub fn follow(
        path: Vec<Vec3<f64>>,
        target_speed: f64,
        obstacle_density: usize,
        obstacle_speed: f64,
    ) -> Self {
        TaskSpec {
            goal: TaskGoal::Follow { path, target_speed, offset: 5.0 },
            ..TaskSpec::hover(0.0, obstacle_density, obstacle_speed)
        }
    }

    pub fn film(
        waypoints: Vec<Vec3<f64>>,
        subject: Vec3<f64>,
        path_speed: f64,
        obstacle_density: usize,
        obstacle_speed: f64,
    ) -> Self {
        TaskSpec {
            goal: TaskGoal::Film { waypoints, subject, path_speed },
            ..TaskSpec::hover(0.0, obstacle_density, obstacle_speed)
        }
    }

    pub fn world_kind(&self) -> TaskKind {
        match self.goal {
            TaskGoal::Hover { .. } => TaskKind::Hovering,
            TaskGoal::Follow { .. } => TaskKind::Following,
            TaskGoal::Film { .. } => TaskKind::Filming,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration > 0.0) {
            return Err("duration must be positive".into());
        }
        if self.r_uav < 0.0 {
            return Err("r_uav must be nonnegative".into());
        }
        if !(self.d_max > 0.0) {
            return Err("d_max must be positive".into());
        }
        if !(self.obstacle_size > 0.0) {
            return Err("obstacle_size must be positive".into());
        }
        if self.obstacle_speed < 0.0 {
            return Err("obstacle_speed must be nonnegative".into());
        }
        let finite3 = |v: &Vec3<f64>| v.x.is_finite() && v.y.is_finite() && v.z.is_finite();
        match &self.goal {
            TaskGoal::Hover { anchor, psi_c } => {
                if !finite3(anchor) || !psi_c.is_finite() {
                    return Err("hover anchor and heading must be finite".into());
                }
            }
            TaskGoal::Follow { path, target_speed, offset } => {
                if path.is_empty() {
                    return Err("follow path needs at least one waypoint".into());
                }
                if !path.iter().all(finite3) || !target_speed.is_finite() || !offset.is_finite() {
                    return Err("follow parameters must be finite".into());
                }
                if *target_speed < 0.0 || *offset < 0.0 {
                    return Err("follow speed and offset must be nonnegative".into());
                }
            }
            TaskGoal::Film { waypoints, subject, path_speed } => {
                if waypoints.is_empty() {
                    return Err("film path needs at least one waypoint".into());
                }
                if !waypoints.iter().all(finite3) || !finite3(subject) || !path_speed.is_finite() {
                    return Err("film parameters must be finite".into());
                }
                if *path_speed < 0.0 {
                    return Err("film path speed must be nonnegative".into());
                }
            }
        }
        Ok(())
    }
}

/// Commanded goal position and heading at episode time `t`.
pub fn goal_stream(task: &TaskSpec, t: f64) -> (Vec3<f64>, f64) {
    match &task.goal {
        TaskGoal::Hover { anchor, psi_c } => (*anchor, *psi_c),
        TaskGoal::Follow { path, target_speed, offset } => {
            let line = Polyline::new(path.clone());
            let s = target_speed * t;
            let target = line.at(s);
            let heading = line.heading(s);
            let goal = target + heading.scale(*offset);
            (goal, (-heading.y).atan2(-heading.x))
        }
        TaskGoal::Film { waypoints, subject, path_speed } => {
            let line = Polyline::new(waypoints.clone());
            let goal = line.at(path_speed * t);
            let look = *subject - goal;
            let psi = if look.x.hypot(look.y) < 1e-9 { 0.0 } else { look.y.atan2(look.x) };
            (goal, psi)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalStep {
    /// Episode time at the end of the step.
    pub t: f64,
    pub p: Vec3<f64>,
    pub v: Vec3<f64>,
    /// Body-frame command emitted by the policy.
    pub u: Vec3<f64>,
    pub clearance: f64,
    pub collision: bool,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialLog {
    pub seed: u64,
    pub steps: Vec<EvalStep>,
    /// Disjoint (start, end) spans of continuous collision, in seconds.
    pub collision_intervals: Vec<(f64, f64)>,
    pub goal_trace: Vec<(f64, Vec3<f64>)>,
    pub diverged: bool,
    pub duration: f64,
    /// Total seconds in collision; a diverged trial forfeits the remainder.
    pub collision_time: f64,
    pub mean_tracking_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub trials: usize,
    pub seed_base: u64,
    pub noise_gamma: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { trials: 10, seed_base: 1000, noise_gamma: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub collided: bool,
    pub collision_time: f64,
    pub diverged: bool,
    pub steps: usize,
    pub mean_tracking_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: TaskSpec,
    pub noise_gamma: f64,
    pub trials: usize,
    pub seed_base: u64,
    pub records: Vec<TrialRecord>,
    pub successes: usize,
    pub sr: f64,
    pub ct: f64,
}

pub struct EvalRun {
    pub report: EvalReport,
    pub logs: Vec<TrialLog>,
}

fn v3f<S: Scalar>(v: Vec3<S>) -> Vec3<f64> {
    Vec3::new(v.x.f(), v.y.f(), v.z.f())
}

fn smooth_l1_sum(d: Vec3<f64>) -> f64 {
    [d.x, d.y, d.z]
        .iter()
        .map(|&c| {
            let a = c.abs();
            if a < 1.0 {
                0.5 * a * a
            } else {
                a - 0.5
            }
        })
        .sum()
}

/// One closed-loop episode. The heading follows the task's commanded stream,
/// the hidden state starts at zero, and collisions never end the episode;
/// only non-finite state does, which forfeits the remaining duration.
pub fn run_trial<S: Scalar>(
    task: &TaskSpec,
    net: &PolicyNet<S>,
    seed: u64,
    noise_gamma: f64,
) -> TrialLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = spawn_task_scene::<S, _>(
        task.world_kind(),
        task.obstacle_density,
        S::c(task.obstacle_speed),
        S::c(task.obstacle_size),
        &mut rng,
    );
    run_trial_in(task, net, seed, noise_gamma, scene, rng)
}

/// `run_trial` with the scene (and the generator state that produced it)
/// supplied by the caller; used for crafted layouts.
pub fn run_trial_in<S: Scalar>(
    task: &TaskSpec,
    net: &PolicyNet<S>,
    seed: u64,
    noise_gamma: f64,
    mut scene: Scene<S>,
    mut rng: ChaCha8Rng,
) -> TrialLog {
    task.validate().unwrap_or_else(|e| panic!("invalid task: {}", e));
    let sim = SimConfig::<S>::default();
    let losses = LossConfig::<f64>::default();
    let (goal0, psi0) = goal_stream(task, 0.0);
    let spawn = sample_goal(Vec3::splat64(goal0.x, goal0.y, goal0.z), 1.0, &scene, &mut rng);
    let mut state = UavState::at_rest(spawn, S::c(psi0));
    let mut h: Vec<S> = vec![S::zero(); net.spec.hidden()];
    let hidden = h.len();

    let mut t = 0.0;
    let mut steps: Vec<EvalStep> = Vec::new();
    let mut goal_trace: Vec<(f64, Vec3<f64>)> = Vec::new();
    let mut vel_hist: Vec<Vec3<f64>> = Vec::new();
    let mut collision_time = 0.0;
    let mut trk_sum = 0.0;
    let mut diverged = false;

    while task.duration - t > 1e-9 {
        let (goal, psi) = goal_stream(task, t);
        goal_trace.push((t, goal));
        state.yaw = S::c(psi);
        let dt = sample_dt(&sim, &mut rng).f().min(task.duration - t);

        let mut tape: Tape<S> = Tape::new();
        let ids = net.store.register(&mut tape, false);
        let depth = render_policy_input(
            &mut tape,
            &net.spec,
            &scene,
            state.p,
            psi,
            S::c(task.d_max),
            noise_gamma,
            &mut rng,
        );
        let p_leaf = tape.leaf(state.p.to_array().to_vec(), &[3]);
        let v_leaf = tape.leaf(state.v.to_array().to_vec(), &[3]);
        let h_leaf = tape.leaf(h.clone(), &[hidden]);
        let obs = build_observation_tape(
            &mut tape,
            p_leaf,
            v_leaf,
            S::c(psi),
            Vec3::splat64(goal.x, goal.y, goal.z),
            S::c(task.r_uav),
            net.spec.obs_dim,
        );
        let (u_id, _v_hat, h_next) = net.forward(&mut tape, &ids, depth, obs, h_leaf);
        let u = Vec3::new(tape.data(u_id)[0], tape.data(u_id)[1], tape.data(u_id)[2]);

        let next = step(&state, u, S::c(dt), &sim);
        let finite = next.p.to_array().iter().chain(next.v.to_array().iter()).all(|c| c.f().is_finite());
        if !finite {
            diverged = true;
            collision_time += task.duration - t;
            break;
        }
        h = tape.data(h_next).to_vec();
        scene = step_obstacles(&scene, S::c(dt), &mut rng);
        t += dt;

        let cl = clearance(&scene, next.p).dist.f();
        let collision = cl < task.r_uav;
        if collision {
            collision_time += dt;
        }
        steps.push(EvalStep {
            t,
            p: v3f(next.p),
            v: v3f(next.v),
            u: v3f(u),
            clearance: cl,
            collision,
            dt,
        });

        vel_hist.push(v3f(next.v));
        if vel_hist.len() > losses.window {
            vel_hist.remove(0);
        }
        let n = vel_hist.len() as f64;
        let v_bar = vel_hist.iter().fold(Vec3::zero(), |acc, v| acc + *v).scale(1.0 / n);
        let v_star = clip_norm(goal - v3f(next.p), losses.v_max_target);
        trk_sum += smooth_l1_sum(v_bar - v_star);
        state = next;
    }

    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for s in &steps {
        if s.collision {
            match intervals.last_mut() {
                Some(last) if (last.1 - (s.t - s.dt)).abs() < 1e-9 => last.1 = s.t,
                _ => intervals.push((s.t - s.dt, s.t)),
            }
        }
    }
    if diverged {
        let fail_at = steps.last().map_or(0.0, |s| s.t);
        match intervals.last_mut() {
            Some(last) if (last.1 - fail_at).abs() < 1e-9 => last.1 = task.duration,
            _ => intervals.push((fail_at, task.duration)),
        }
    }

    let mean_tracking_loss = if steps.is_empty() { 0.0 } else { trk_sum / steps.len() as f64 };
    TrialLog {
        seed,
        steps,
        collision_intervals: intervals,
        goal_trace,
        diverged,
        duration: task.duration,
        collision_time,
        mean_tracking_loss,
    }
}

/// SR and CT over a batch of trials.
pub fn aggregate(task: &TaskSpec, cfg: &EvalConfig, logs: &[TrialLog]) -> EvalReport {
    assert!(!logs.is_empty(), "aggregate needs at least one trial");
    let records: Vec<TrialRecord> = logs
        .iter()
        .map(|l| TrialRecord {
            seed: l.seed,
            collided: !l.collision_intervals.is_empty(),
            collision_time: l.collision_time,
            diverged: l.diverged,
            steps: l.steps.len(),
            mean_tracking_loss: l.mean_tracking_loss,
        })
        .collect();
    let n = logs.len();
    let successes = records.iter().filter(|r| !r.collided).count();
    let ct = records.iter().map(|r| if r.collided { r.collision_time } else { 0.0 }).sum::<f64>()
        / n as f64;
    EvalReport {
        task: task.clone(),
        noise_gamma: cfg.noise_gamma,
        trials: n,
        seed_base: cfg.seed_base,
        records,
        successes,
        sr: successes as f64 / n as f64,
        ct,
    }
}

/// Sequential evaluation of `cfg.trials` seeded trials.
pub fn evaluate<S: Scalar>(task: &TaskSpec, net: &PolicyNet<S>, cfg: &EvalConfig) -> EvalRun {
    assert!(cfg.trials >= 1, "evaluation needs at least one trial");
    let logs: Vec<TrialLog> = (0..cfg.trials)
        .map(|i| run_trial(task, net, cfg.seed_base.wrapping_add(i as u64), cfg.noise_gamma))
        .collect();
    let report = aggregate(task, cfg, &logs);
    EvalRun { report, logs }
}

/// Worker cap: `PANOAVOID_THREADS` when set (invalid values fall back to 1),
/// otherwise the machine's available parallelism.
pub fn thread_limit() -> usize {
    match std::env::var("PANOAVOID_THREADS") {
        Ok(s) => s.trim().parse().ok().filter(|&n| n >= 1).unwrap_or(1),
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

/// Evaluation from a checkpoint file, fanning trials out over up to
/// `threads` workers. Each worker loads its own copy of the policy; trial
/// seeding makes the result independent of the worker count.
pub fn evaluate_file_with_threads<S: Scalar>(
    task: &TaskSpec,
    checkpoint: &Path,
    cfg: &EvalConfig,
    threads: usize,
) -> Result<EvalRun, CheckpointError> {
    assert!(cfg.trials >= 1, "evaluation needs at least one trial");
    let workers = threads.max(1).min(cfg.trials);
    if workers == 1 {
        let net = PolicyNet::<S>::load(checkpoint)?;
        return Ok(evaluate(task, &net, cfg));
    }
    let slots: Mutex<Vec<Option<TrialLog>>> = Mutex::new(vec![None; cfg.trials]);
    let failure: Mutex<Option<CheckpointError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for w in 0..workers {
            let slots = &slots;
            let failure = &failure;
            scope.spawn(move || {
                let net = match PolicyNet::<S>::load(checkpoint) {
                    Ok(net) => net,
                    Err(e) => {
                        *failure.lock().unwrap() = Some(e);
                        return;
                    }
                };
                for i in (w..cfg.trials).step_by(workers) {
                    let log =
                        run_trial(task, &net, cfg.seed_base.wrapping_add(i as u64), cfg.noise_gamma);
                    slots.lock().unwrap()[i] = Some(log);
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let logs: Vec<TrialLog> =
        slots.into_inner().unwrap().into_iter().map(|l| l.expect("missing trial")).collect();
    let report = aggregate(task, cfg, &logs);
    Ok(EvalRun { report, logs })
}

pub fn evaluate_file<S: Scalar>(
    task: &TaskSpec,
    checkpoint: &Path,
    cfg: &EvalConfig,
) -> Result<EvalRun, CheckpointError> {
    evaluate_file_with_threads::<S>(task, checkpoint, cfg, thread_limit())
}

/// One report per requested depth-noise level, same seeds throughout.
pub fn sweep_noise<S: Scalar>(
    task: &TaskSpec,
    checkpoint: &Path,
    gammas: &[f64],
    cfg: &EvalConfig,
) -> Result<Vec<EvalRun>, CheckpointError> {
    gammas
        .iter()
        .map(|&g| {
            let cfg_g = EvalConfig { noise_gamma: g, ..cfg.clone() };
            evaluate_file::<S>(task, checkpoint, &cfg_g)
        })
        .collect()
}

pub const DEFAULT_SIZE_RADII: [f64; 7] = [0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Hovering evaluation across obstacle radii at the fixed 5 m/s sweep speed.
pub fn sweep_size<S: Scalar>(
    checkpoint: &Path,
    template: &TaskSpec,
    radii: &[f64],
    cfg: &EvalConfig,
) -> Result<Vec<(f64, EvalRun)>, CheckpointError> {
    assert!(
        matches!(template.goal, TaskGoal::Hover { .. }),
        "the size sweep runs on the hover task"
    );
    radii
        .iter()
        .map(|&r| {
            let mut task = template.clone();
            task.obstacle_size = r;
            task.obstacle_speed = 5.0;
            evaluate_file::<S>(&task, checkpoint, cfg).map(|run| (r, run))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct HeadingAblation {
    pub headings: Vec<f64>,
    pub fixed: Vec<EvalReport>,
    pub free: Vec<EvalReport>,
}

/// Mean and population variance of per-heading success rates.
pub fn sr_stats(reports: &[EvalReport]) -> (f64, f64) {
    let n = reports.len() as f64;
    let mean = reports.iter().map(|r| r.sr).sum::<f64>() / n;
    let var = reports.iter().map(|r| (r.sr - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Both checkpoints evaluated on hovering at evenly spaced commanded
/// headings.
pub fn heading_ablation<S: Scalar>(
    checkpoint_fixed: &Path,
    checkpoint_free: &Path,
    n_headings: usize,
    template: &TaskSpec,
    cfg: &EvalConfig,
) -> Result<HeadingAblation, CheckpointError> {
    assert!(n_headings >= 1);
    let mut headings = Vec::with_capacity(n_headings);
    let mut fixed = Vec::new();
    let mut free = Vec::new();
    for k in 0..n_headings {
        let psi = std::f64::consts::TAU * k as f64 / n_headings as f64;
        headings.push(psi);
        let mut task = template.clone();
        match &mut task.goal {
            TaskGoal::Hover { psi_c, .. } => *psi_c = psi,
            _ => panic!("heading ablation runs on the hover task"),
        }
        fixed.push(evaluate_file::<S>(&task, checkpoint_fixed, cfg)?.report);
        free.push(evaluate_file::<S>(&task, checkpoint_free, cfg)?.report);
    }
    Ok(HeadingAblation { headings, fixed, free })
}

pub fn report_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialization");
    s.push('\n');
    s
}

pub fn trajectory_csv(log: &TrialLog) -> String {
    let mut out = String::from("t,px,py,pz,vx,vy,vz,ux,uy,uz,clearance,collision\n");
    for s in &log.steps {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.t,
            s.p.x,
            s.p.y,
            s.p.z,
            s.v.x,
            s.v.y,
            s.v.z,
            s.u.x,
            s.u.y,
            s.u.z,
            s.clearance,
            s.collision as u8
        ));
    }
    out
}

/// Top-down SVG of a flown trajectory: the path, obstacle outlines when a
/// scene is supplied, and colliding spans in their own stroke class.
pub fn replay_svg(points: &[(f64, Vec3<f64>, bool)], scene: Option<&Scene<f64>>) -> String {
    use crate::world::Shape;
    use std::fmt::Write as _;

    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut cover = |x: f64, y: f64, pad: f64| {
        min.0 = min.0.min(x - pad);
        min.1 = min.1.min(y - pad);
        max.0 = max.0.max(x + pad);
        max.1 = max.1.max(y + pad);
    };
    for (_, p, _) in points {
        cover(p.x, p.y, 0.0);
    }
    let mut obstacles: Vec<(f64, f64, f64)> = Vec::new();
    if let Some(scene) = scene {
        for o in &scene.obstacles {
            let r = match o.shape {
                Shape::Sphere { radius } => radius,
                Shape::VerticalCapsule { radius, .. } => radius,
            };
            obstacles.push((o.position.x, o.position.y, r));
            cover(o.position.x, o.position.y, r);
        }
    }
    if !min.0.is_finite() {
        min = (-1.0, -1.0);
        max = (1.0, 1.0);
    }
    let margin = 2.0;
    min = (min.0 - margin, min.1 - margin);
    max = (max.0 + margin, max.1 + margin);
    let span = ((max.0 - min.0).max(1e-6), (max.1 - min.1).max(1e-6));
    let scale = 600.0 / span.0.max(span.1);
    let (w, h) = (span.0 * scale, span.1 * scale);
    let sx = |x: f64| (x - min.0) * scale;
    let sy = |y: f64| (max.1 - y) * scale;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w:.1} {h:.1}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"#fafafa\"/>\n"
    );
    for (x, y, r) in &obstacles {
        let _ = writeln!(
            svg,
            "<circle class=\"obstacle\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"#9a9a9a\" fill-opacity=\"0.45\"/>",
            sx(*x),
            sy(*y),
            r * scale
        );
    }
    let coords = |pts: &[(f64, Vec3<f64>, bool)]| {
        pts.iter()
            .map(|(_, p, _)| format!("{:.2},{:.2}", sx(p.x), sy(p.y)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    if !points.is_empty() {
        let _ = writeln!(
            svg,
            "<polyline class=\"path\" points=\"{}\" fill=\"none\" stroke=\"#2a6fb8\" stroke-width=\"2\"/>",
            coords(points)
        );
        let mut run: Vec<(f64, Vec3<f64>, bool)> = Vec::new();
        let flush = |run: &mut Vec<(f64, Vec3<f64>, bool)>, svg: &mut String| {
            if run.len() >= 2 {
                let _ = writeln!(
                    svg,
                    "<polyline class=\"collision\" points=\"{}\" fill=\"none\" stroke=\"#c43535\" stroke-width=\"4\"/>",
                    coords(run)
                );
            } else if run.len() == 1 {
                let p = run[0].1;
                let _ = writeln!(
                    svg,
                    "<circle class=\"collision\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#c43535\"/>",
                    sx(p.x),
                    sy(p.y)
                );
            }
            run.clear();
        };
        for (i, step) in points.iter().enumerate() {
            if step.2 {
                if run.is_empty() && i > 0 {
                    run.push(points[i - 1]);
                }
                run.push(*step);
            } else {
                flush(&mut run, &mut svg);
            }
        }
        flush(&mut run, &mut svg);
        let first = points[0].1;
        let last = points[points.len() - 1].1;
        let _ = writeln!(
            svg,
            "<circle class=\"start\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#2f8f4e\"/>",
            sx(first.x),
            sy(first.y)
        );
        let _ = writeln!(
            svg,
            "<circle class=\"end\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#1d1d1d\"/>",
            sx(last.x),
            sy(last.y)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Plain-text grid of SR (as successes/trials) and CT per labeled report.
pub fn summary_grid(rows: &[(String, &EvalReport)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).chain(["condition".len()]).max().unwrap_or(9);
    let mut out = format!("{:label_w$}  {:>7}  {:>8}\n", "condition", "SR", "CT (s)");
    for (label, r) in rows {
        let sr = format!("{}/{}", r.successes, r.trials);
        out.push_str(&format!("{label:label_w$}  {sr:>7}  {:>8.2}\n", r.ct));
    }
    out
}

#[cfg(test)]
mod tests;
