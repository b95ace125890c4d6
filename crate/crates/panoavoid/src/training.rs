//! Closed-loop policy optimization: differentiable rollouts with truncated
//! backpropagation through time, the fixed random-yaw episode strategy and
//! its free-yaw ablation, and an AdamW loop with cosine learning-rate decay.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{sample_dt, step_tape, SimConfig, UavState};
use crate::geometry::{EquirectGrid, Vec3};
use crate::objective::{
    combine_step_losses, moving_average_tape, safety_losses_tape, smoothness_losses_tape,
    target_velocity_tape, tracking_loss_tape, vpred_loss_tape, LossBreakdown, LossConfig,
};
use crate::policy::{build_observation_tape, ParamStore, PolicyNet, PolicySpec, PolicyVariant};
use crate::render::{
    add_noise, normalize_for_net, normalize_stack_for_net, render_cubefaces, render_equirect,
    render_pinhole, DepthImage, NoiseConfig,
};
use crate::scalar::Scalar;
use crate::tensor::{checkpoint::CheckpointError, Tape, TensorId};
use crate::world::{clearance, clearance_node, in_collision, spawn_task_scene, step_obstacles, Scene, TaskKind};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawMode {
    /// One uniform draw per episode, held constant.
    FixedRandom,
    /// Yaw tracks the horizontal direction of motion each step.
    Free,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Control steps per rollout (T).
    pub rollout_steps: usize,
    pub total_gradient_steps: usize,
    /// Steps between gradient truncations; T disables truncation.
    pub tbptt_window: usize,
    pub yaw_mode: YawMode,
    pub seed: u64,
    pub task: TaskKind,
    pub obstacle_density: usize,
    pub obstacle_speed: f64,
    pub obstacle_size: f64,
    pub desk_scale: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Per-episode depth noise level drawn from U[0, depth_noise_max].
    pub depth_noise_max: f64,
    /// Spawn offset from the anchor, drawn from U[0, spawn_radius].
    pub spawn_radius: f64,
    /// Goal offset from the anchor, drawn from a ball of this radius.
    pub goal_offset: f64,
    pub goal_resample_every: usize,
    pub uav_radius: f64,
    pub d_max: f64,
    /// Gradient steps between intermediate checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Explicit architecture; None selects the scale-appropriate panoramic preset.
    pub policy: Option<PolicySpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rollout_steps: 600,
            total_gradient_steps: 6000,
            tbptt_window: 64,
            yaw_mode: YawMode::FixedRandom,
            seed: 7,
            task: TaskKind::Hovering,
            obstacle_density: 6,
            obstacle_speed: 3.0,
            obstacle_size: 0.5,
            desk_scale: false,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            depth_noise_max: 0.2,
            spawn_radius: 4.0,
            goal_offset: 1.0,
            goal_resample_every: 150,
            uav_radius: 0.2,
            d_max: 30.0,
            checkpoint_every: 1000,
            policy: None,
        }
    }
}

impl TrainConfig {
    /// Small-input preset that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        TrainConfig {
            rollout_steps: 150,
            total_gradient_steps: 400,
            tbptt_window: 150,
            obstacle_density: 2,
            obstacle_speed: 2.0,
            obstacle_size: 1.0,
            desk_scale: true,
            spawn_radius: 3.0,
            checkpoint_every: 0,
            ..TrainConfig::default()
        }
    }

    pub fn policy_spec(&self) -> PolicySpec {
        self.policy.clone().unwrap_or_else(|| {
            if self.desk_scale {
                PolicySpec::desk_panoramic()
            } else {
                PolicySpec::full_panoramic()
            }
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rollout_steps == 0 {
            return Err("rollout_steps must be at least 1".into());
        }
        if self.tbptt_window == 0 || self.tbptt_window > self.rollout_steps {
            return Err(format!(
                "tbptt_window must be in [1, {}], got {}",
                self.rollout_steps, self.tbptt_window
            ));
        }
        if self.total_gradient_steps == 0 {
            return Err("total_gradient_steps must be at least 1".into());
        }
        if self.learning_rate <= 0.0 {
            return Err("learning_rate must be positive".into());
        }
        if self.weight_decay < 0.0 {
            return Err("weight_decay must be non-negative".into());
        }
        if self.obstacle_size <= 0.0 {
            return Err("obstacle_size must be positive".into());
        }
        if self.obstacle_speed < 0.0 {
            return Err("obstacle_speed must be non-negative".into());
        }
        if self.depth_noise_max < 0.0 || self.spawn_radius < 0.0 || self.goal_offset < 0.0 {
            return Err("noise and placement radii must be non-negative".into());
        }
        if self.goal_resample_every == 0 {
            return Err("goal_resample_every must be at least 1".into());
        }
        if self.uav_radius < 0.0 {
            return Err("uav_radius must be non-negative".into());
        }
        if self.d_max <= 0.0 {
            return Err("d_max must be positive".into());
        }
        self.policy_spec().validate()?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {}", path.display(), e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| format!("invalid config {}: {}", path.display(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Episode yaw policy. Fixed mode draws once at episode start; free mode is
/// re-evaluated each step from the executed velocity and holds the previous
/// heading below 0.1 m/s of horizontal speed.
pub fn sample_episode_yaw<R: Rng>(mode: YawMode, rng: &mut R, velocity: Vec3<f64>, prev_yaw: f64) -> f64 {
    match mode {
        YawMode::FixedRandom => rng.gen::<f64>() * TAU,
        YawMode::Free => {
            if velocity.x.hypot(velocity.y) < 0.1 {
                prev_yaw
            } else {
                velocity.y.atan2(velocity.x)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<S> {
    /// State after the control step.
    pub state: UavState<S>,
    pub u_body: Vec3<S>,
    pub v_hat: Vec3<S>,
    pub dt: S,
    /// Raw signed distance to the nearest surface at the new position.
    pub clearance: S,
    pub collision: bool,
    pub loss: LossBreakdown<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutLog<S> {
    pub episode_yaw: S,
    pub steps: Vec<StepRecord<S>>,
    /// Goals with the step index at which each became active.
    pub goals: Vec<(usize, Vec3<S>)>,
}

#[derive(Debug)]
pub struct RolloutOutcome<S> {
    /// Loss components averaged over the rollout.
    pub mean_loss: LossBreakdown<f64>,
    /// Accumulated parameter gradients, aligned with the store; empty when
    /// gradients were not requested.
    pub grads: Vec<Vec<S>>,
    pub log: RolloutLog<S>,
}

#[derive(Error, Debug)]
pub enum RolloutError {
    #[error("rollout diverged: non-finite state at step {step}")]
    Diverged { step: usize },
}

/// Per-episode rollout parameters.
#[derive(Clone, Debug)]
pub struct Episode<S> {
    pub start: UavState<S>,
    pub anchor: Vec3<S>,
    pub steps: usize,
    pub tbptt_window: usize,
    pub yaw_mode: YawMode,
    pub noise_gamma: f64,
    pub goal_offset: f64,
    pub goal_resample_every: usize,
    pub uav_radius: S,
    pub d_max: S,
}

/// Renders the observation the policy variant expects at the given pose and
/// places it on the tape as a detached input, optionally noise-corrupted.
pub fn render_policy_input<S: Scalar, R: Rng>(
    tape: &mut Tape<S>,
    spec: &PolicySpec,
    scene: &Scene<S>,
    position: Vec3<S>,
    yaw: f64,
    d_max: S,
    noise_gamma: f64,
    rng: &mut R,
) -> TensorId {
    let mut noisy = |img: DepthImage<S>| {
        if noise_gamma > 0.0 {
            add_noise(&img, NoiseConfig { gamma: noise_gamma, seed: rng.gen::<u64>() })
        } else {
            img
        }
    };
    // A vehicle pushed through the floor still needs a well-formed (if
    // useless) observation; the true state keeps its penetration so the
    // clearance terms and collision flags see it.
    let mut position = position;
    if let Some(gh) = scene.ground_height {
        if position.z <= gh + S::c(1e-3) {
            position.z = gh + S::c(1e-3);
        }
    }
    match spec.variant {
        PolicyVariant::Panoramic => {
            let grid = EquirectGrid::new(spec.input_height, spec.input_width);
            let img = noisy(render_equirect(scene, position, yaw, grid, d_max));
            normalize_for_net(tape, &img)
        }
        PolicyVariant::ForwardView => {
            let img = noisy(render_pinhole(
                scene,
                position,
                yaw,
                FRAC_PI_2,
                spec.input_height,
                spec.input_width,
                d_max,
            ));
            normalize_for_net(tape, &img)
        }
        PolicyVariant::Multiview { n_views } => {
            let faces = render_cubefaces(scene, position, yaw, spec.input_height, d_max);
            let selected: Vec<_> = faces.into_iter().take(n_views).map(&mut noisy).collect();
            normalize_stack_for_net(tape, &selected)
        }
    }
}

fn vec3_from<S: Scalar>(d: &[S]) -> Vec3<S> {
    Vec3::new(d[0], d[1], d[2])
}

fn all_finite<S: Scalar>(d: &[S]) -> bool {
    d.iter().all(|v| v.is_finite())
}

/// Goal draw: anchor plus a uniform-ball offset, kept above the ground.
pub(crate) fn sample_goal<S: Scalar, R: Rng>(
    anchor: Vec3<S>,
    radius: f64,
    scene: &Scene<S>,
    rng: &mut R,
) -> Vec3<S> {
    if radius == 0.0 {
        return anchor;
    }
    let offset = loop {
        let v = Vec3::<S>::splat64(
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        );
        if v.norm().f() <= 1.0 {
            break v.scale(S::c(radius));
        }
    };
    let mut goal = anchor + offset;
    if let Some(gh) = scene.ground_height {
        goal.z = goal.z.max(gh + S::c(0.5));
    }
    goal
}

/// One differentiable closed-loop episode. Gradients are truncated at
/// `tbptt_window` boundaries and accumulated across segments scaled by 1/T,
/// so an untruncated window yields the exact full-rollout gradient.
pub fn rollout<S: Scalar, R: Rng>(
    net: &PolicyNet<S>,
    scene: &Scene<S>,
    ep: &Episode<S>,
    sim: &SimConfig<S>,
    losses: &LossConfig<S>,
    rng: &mut R,
    with_grads: bool,
) -> Result<RolloutOutcome<S>, RolloutError> {
    assert!(ep.steps >= 1, "rollout needs at least one step");
    assert!(
        ep.tbptt_window >= 1 && ep.tbptt_window <= ep.steps,
        "tbptt_window {} outside [1, {}]",
        ep.tbptt_window,
        ep.steps
    );

    let mut tape: Tape<S> = Tape::new();
    let ids = net.store.register(&mut tape, with_grads);
    let mut p = tape.leaf(ep.start.p.to_array().to_vec(), &[3]);
    let mut v = tape.leaf(ep.start.v.to_array().to_vec(), &[3]);
    let mut a = tape.leaf(ep.start.a_real.to_array().to_vec(), &[3]);
    let mut h = net.initial_hidden(&mut tape);
    let zero3 = tape.leaf(vec![S::zero(); 3], &[3]);
    let (mut u_prev, mut u_prev2) = (zero3, zero3);
    let mut vel_hist: Vec<TensorId> = Vec::new();
    let mut yaw = ep.start.yaw;
    let mut goal = ep.anchor;
    let mut scene_now = scene.clone();
    let inv_t = S::one() / S::c(ep.steps as f64);

    let mut seg: Vec<TensorId> = Vec::new();
    let mut grads: Vec<Vec<S>> = if with_grads {
        net.store.entries.iter().map(|e| vec![S::zero(); e.data.len()]).collect()
    } else {
        Vec::new()
    };
    let mut log = RolloutLog {
        episode_yaw: yaw,
        steps: Vec::with_capacity(ep.steps),
        goals: Vec::new(),
    };
    let mut sums = LossBreakdown::<f64>::default();

    for t in 0..ep.steps {
        if t % ep.goal_resample_every == 0 {
            goal = sample_goal(ep.anchor, ep.goal_offset, &scene_now, rng);
            log.goals.push((t, goal));
        }
        let dt = sample_dt(sim, rng);
        let pos = vec3_from(tape.data(p));
        let depth = render_policy_input(
            &mut tape,
            &net.spec,
            &scene_now,
            pos,
            yaw.f(),
            ep.d_max,
            ep.noise_gamma,
            rng,
        );
        let obs = build_observation_tape(&mut tape, p, v, yaw, goal, ep.uav_radius, net.spec.obs_dim);
        let (u, v_hat, h_next) = net.forward(&mut tape, &ids, depth, obs, h);
        h = h_next;
        let (p2, v2, a2) = step_tape(&mut tape, p, v, a, yaw, u, dt, sim);
        p = p2;
        v = v2;
        a = a2;
        scene_now = step_obstacles(&scene_now, dt, rng);

        vel_hist.push(v);
        if vel_hist.len() > losses.window {
            vel_hist.remove(0);
        }
        let v_bar = moving_average_tape(&mut tape, &vel_hist);
        let v_star = target_velocity_tape(&mut tape, p, goal, losses.v_max_target);
        let trk = tracking_loss_tape(&mut tape, v_bar, v_star);
        let cl = clearance_node(&mut tape, &scene_now, p);
        let (avoid, collide) = safety_losses_tape(&mut tape, cl, v, losses);
        let (acc, jerk) = smoothness_losses_tape(&mut tape, u, u_prev, u_prev2, losses);
        let vp = vpred_loss_tape(&mut tape, v_hat, v);
        let (total, breakdown) = combine_step_losses(&mut tape, trk, avoid, collide, acc, jerk, vp, losses);
        seg.push(total);

        let pd = tape.data(p);
        let vd = tape.data(v);
        let ad = tape.data(a);
        if !(all_finite(pd) && all_finite(vd) && all_finite(ad) && breakdown.total.is_finite()) {
            return Err(RolloutError::Diverged { step: t });
        }
        let state = UavState { p: vec3_from(pd), v: vec3_from(vd), a_real: vec3_from(ad), yaw };
        let clearance_raw = tape.data(cl)[0];
        let collision = clearance_raw < ep.uav_radius;
        debug_assert_eq!(collision, in_collision(&scene_now, state.p, ep.uav_radius));
        log.steps.push(StepRecord {
            state,
            u_body: vec3_from(tape.data(u)),
            v_hat: vec3_from(tape.data(v_hat)),
            dt,
            clearance: clearance_raw,
            collision,
            loss: breakdown,
        });
        sums.trk += breakdown.trk.f();
        sums.avoid += breakdown.avoid.f();
        sums.collide += breakdown.collide.f();
        sums.acc += breakdown.acc.f();
        sums.jerk += breakdown.jerk.f();
        sums.vpred += breakdown.vpred.f();
        sums.total += breakdown.total.f();

        u_prev2 = u_prev;
        u_prev = u;
        if ep.yaw_mode == YawMode::Free {
            let vw = vec3_from(tape.data(v));
            yaw = S::c(sample_episode_yaw(
                YawMode::Free,
                rng,
                Vec3::new(vw.x.f(), vw.y.f(), vw.z.f()),
                yaw.f(),
            ));
        }

        if (t + 1) % ep.tbptt_window == 0 || t + 1 == ep.steps {
            let seg_sum = if seg.len() == 1 {
                seg[0]
            } else {
                let cat = tape.concat(&seg);
                tape.sum(cat)
            };
            let scaled = tape.scale(seg_sum, inv_t);
            if with_grads {
                tape.backward(scaled);
                for (gi, &id) in ids.iter().enumerate() {
                    if let Some(g) = tape.grad(id) {
                        for (dst, &src) in grads[gi].iter_mut().zip(g) {
                            *dst = *dst + src;
                        }
                    }
                }
            }
            let mut keep = vec![p, v, a, h, u_prev, u_prev2];
            keep.extend(vel_hist.iter().copied());
            let fresh = tape.truncate(&keep);
            p = fresh[0];
            v = fresh[1];
            a = fresh[2];
            h = fresh[3];
            u_prev = fresh[4];
            u_prev2 = fresh[5];
            vel_hist = fresh[6..].to_vec();
            seg.clear();
        }
    }

    let n = ep.steps as f64;
    let mean_loss = LossBreakdown {
        trk: sums.trk / n,
        avoid: sums.avoid / n,
        collide: sums.collide / n,
        acc: sums.acc / n,
        jerk: sums.jerk / n,
        vpred: sums.vpred / n,
        total: sums.total / n,
    };
    Ok(RolloutOutcome { mean_loss, grads, log })
}

// ── Optimizer ────────────────────────────────────────────────────────────

/// AdamW with decoupled weight decay; moments are kept in f64 regardless of
/// the parameter scalar type.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl AdamW {
    pub fn new<S: Scalar>(store: &ParamStore<S>, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: store.entries.iter().map(|e| vec![0.0; e.data.len()]).collect(),
            v: store.entries.iter().map(|e| vec![0.0; e.data.len()]).collect(),
            t: 0,
        }
    }

    pub fn step<S: Scalar>(&mut self, store: &mut ParamStore<S>, grads: &[Vec<S>], lr: f64) {
        assert_eq!(grads.len(), store.entries.len(), "gradient list does not match store");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..grads.len() {
            assert_eq!(grads[i].len(), store.entries[i].data.len());
            let data = store.data_mut(i);
            for j in 0..grads[i].len() {
                let g = grads[i][j].f();
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i][j] / bc1;
                let v_hat = self.v[i][j] / bc2;
                let theta = data[j].f();
                let update = m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * theta;
                data[j] = S::c(theta - lr * update);
            }
        }
    }
}

/// Cosine decay from lr0 at the first step to exactly 0.01·lr0 at the last.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    const FLOOR: f64 = 0.01;
    if total_steps <= 1 {
        return lr0;
    }
    let progress = step as f64 / (total_steps - 1) as f64;
    lr0 * (FLOOR + (1.0 - FLOOR) * 0.5 * (1.0 + (PI * progress).cos()))
}

// ── Training loop ────────────────────────────────────────────────────────

#[derive(Error, Debug)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at gradient step {gradient_step}, control step {control_step}")]
    Diverged { gradient_step: usize, control_step: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub struct TrainOutcome<S: Scalar> {
    pub net: PolicyNet<S>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

/// Spawn draw near the anchor, kept above ground and out of contact.
fn sample_spawn<S: Scalar, R: Rng>(
    scene: &Scene<S>,
    anchor: Vec3<S>,
    radius: f64,
    uav_radius: S,
    rng: &mut R,
) -> Vec3<S> {
    let mut fallback = anchor;
    for _ in 0..100 {
        let candidate = sample_goal(anchor, radius, scene, rng);
        fallback = candidate;
        if clearance(scene, candidate).dist > uav_radius + S::c(0.3) {
            return candidate;
        }
    }
    fallback
}

fn initial_yaw<S: Scalar, R: Rng>(mode: YawMode, p0: Vec3<S>, anchor: Vec3<S>, rng: &mut R) -> f64 {
    match mode {
        YawMode::FixedRandom => sample_episode_yaw(mode, rng, Vec3::zero(), 0.0),
        YawMode::Free => {
            let to_anchor = anchor - p0;
            sample_episode_yaw(
                mode,
                rng,
                Vec3::new(to_anchor.x.f(), to_anchor.y.f(), to_anchor.z.f()),
                0.0,
            )
        }
    }
}

/// Full optimization run: one rollout per gradient step, AdamW update under
/// the cosine schedule, a loss CSV row per step, and periodic checkpoints.
pub fn train<S: Scalar>(cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome<S>, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net: PolicyNet<S> = PolicyNet::init(cfg.policy_spec(), &mut rng);
    let sim = SimConfig::<S>::default();
    let losses = LossConfig::<S>::default();
    let mut opt = AdamW::new(&net.store, cfg.weight_decay);

    let loss_csv = out_dir.join("loss.csv");
    let mut csv = BufWriter::new(File::create(&loss_csv)?);
    writeln!(csv, "step,trk,avoid,collide,acc,jerk,vpred,total,lr")?;
    let mut checkpoints = Vec::new();

    for gs in 0..cfg.total_gradient_steps {
        let scene = spawn_task_scene::<S, _>(
            cfg.task,
            cfg.obstacle_density,
            S::c(cfg.obstacle_speed),
            S::c(cfg.obstacle_size),
            &mut rng,
        );
        let anchor = scene.anchor();
        let p0 = sample_spawn(&scene, anchor, cfg.spawn_radius, S::c(cfg.uav_radius), &mut rng);
        let yaw0 = initial_yaw(cfg.yaw_mode, p0, anchor, &mut rng);
        let noise_gamma = if cfg.depth_noise_max > 0.0 {
            rng.gen::<f64>() * cfg.depth_noise_max
        } else {
            0.0
        };
        let ep = Episode {
            start: UavState::at_rest(p0, S::c(yaw0)),
            anchor,
            steps: cfg.rollout_steps,
            tbptt_window: cfg.tbptt_window,
            yaw_mode: cfg.yaw_mode,
            noise_gamma,
            goal_offset: cfg.goal_offset,
            goal_resample_every: cfg.goal_resample_every,
            uav_radius: S::c(cfg.uav_radius),
            d_max: S::c(cfg.d_max),
        };
        let out = rollout(&net, &scene, &ep, &sim, &losses, &mut rng, true).map_err(
            |RolloutError::Diverged { step }| TrainError::Diverged {
                gradient_step: gs,
                control_step: step,
            },
        )?;
        let lr = cosine_lr(gs, cfg.total_gradient_steps, cfg.learning_rate);
        opt.step(&mut net.store, &out.grads, lr);

        let b = &out.mean_loss;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            gs, b.trk, b.avoid, b.collide, b.acc, b.jerk, b.vpred, b.total, lr
        )?;
        if cfg.checkpoint_every > 0
            && (gs + 1) % cfg.checkpoint_every == 0
            && gs + 1 < cfg.total_gradient_steps
        {
            let path = out_dir.join(format!("checkpoint_{:06}.ckpt", gs + 1));
            net.save(&path)?;
            checkpoints.push(path);
        }
    }
    csv.flush()?;
    drop(csv);

    let final_checkpoint = out_dir.join("checkpoint_final.ckpt");
    net.save(&final_checkpoint)?;
    checkpoints.push(final_checkpoint.clone());
    Ok(TrainOutcome { net, checkpoints, final_checkpoint, loss_csv })
}
