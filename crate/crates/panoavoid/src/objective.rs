//! Composite training loss, computed per rollout step from the state,
//! command, and clearance nodes of a differentiable rollout.
//!
//! Every term exists in two forms: plain scalar math for evaluation and
//! logging, and tape compositions for backprop. The tape forms reuse the
//! same constants so the two agree to rounding.

use serde::{Deserialize, Serialize};

use crate::dynamics::clip_norm_tape;
use crate::geometry::Vec3;
use crate::scalar::Scalar;
use crate::tensor::{softplus, Tape, TensorId};

/// Sharpness of the softened positive part in the approach speed.
const APPROACH_SHARPNESS: f64 = 10.0;

#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct LossConfig<S> {
    pub lambda_trk: S,
    pub lambda_avoid: S,
    pub lambda_collide: S,
    /// Collision barrier sharpness.
    pub gamma: S,
    pub lambda_acc: S,
    pub lambda_jerk: S,
    pub lambda_vp: S,
    /// Subtracted from raw clearance before the safety terms.
    pub safety_margin: S,
    /// Saturation of the goal-directed target velocity (m/s).
    pub v_max_target: S,
    /// Moving-average window over executed velocities (steps).
    pub window: usize,
    /// Nominal control interval used for command differencing (s).
    pub dt_nominal: S,
}

impl<S: Scalar> Default for LossConfig<S> {
    fn default() -> Self {
        LossConfig {
            lambda_trk: S::c(1.0),
            lambda_avoid: S::c(1.5),
            lambda_collide: S::c(2.0),
            gamma: S::c(32.0),
            lambda_acc: S::c(0.01),
            lambda_jerk: S::c(0.001),
            lambda_vp: S::c(2.0),
            safety_margin: S::c(0.2),
            v_max_target: S::c(3.0),
            window: 30,
            dt_nominal: S::c(1.0 / 15.0),
        }
    }
}

impl<S: Scalar> LossConfig<S> {
    pub fn validate(&self) {
        let nonneg = [
            self.lambda_trk,
            self.lambda_avoid,
            self.lambda_collide,
            self.lambda_acc,
            self.lambda_jerk,
            self.lambda_vp,
            self.safety_margin,
        ];
        assert!(nonneg.iter().all(|&l| l >= S::zero()), "loss weights must be non-negative");
        assert!(self.gamma > S::zero(), "gamma must be positive");
        assert!(self.window >= 1, "window must be at least one step");
        assert!(self.v_max_target > S::zero() && self.dt_nominal > S::zero(), "rates must be positive");
    }
}

/// Per-step loss components, before weighting, plus the weighted total.
#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<S> {
    pub trk: S,
    pub avoid: S,
    pub collide: S,
    pub acc: S,
    pub jerk: S,
    pub vpred: S,
    pub total: S,
}

// ── Plain forms ──────────────────────────────────────────────────────────

/// Goal-directed target velocity over a one-second horizon, saturated.
pub fn target_velocity<S: Scalar>(p: Vec3<S>, goal: Vec3<S>, v_max_target: S) -> Vec3<S> {
    crate::dynamics::clip_norm(goal - p, v_max_target)
}

/// Per-component SmoothL1 with unit threshold.
pub fn smooth_l1<S: Scalar>(x: S) -> S {
    if x.abs() < S::one() {
        S::c(0.5) * x * x
    } else {
        x.abs() - S::c(0.5)
    }
}

/// Softened positive part of the velocity projection onto the direction of
/// the nearest obstacle.
pub fn approach_speed<S: Scalar>(v_dot: S) -> S {
    let k = S::c(APPROACH_SHARPNESS);
    softplus(k * v_dot) / k
}

/// Proximity penalty active within 1 m of the margin-adjusted clearance.
pub fn avoid_formula<S: Scalar>(d: S, v_to_pt: S) -> S {
    let gap = (S::one() - d).max(S::zero());
    gap * gap * v_to_pt
}

/// Collision barrier: softplus ramp through the margin-adjusted clearance.
pub fn collide_formula<S: Scalar>(d: S, v_to_pt: S, gamma: S) -> S {
    softplus(-gamma * d) * v_to_pt
}

// ── Tape forms ───────────────────────────────────────────────────────────

/// Tape counterpart of [`target_velocity`]; the goal enters as a constant.
pub fn target_velocity_tape<S: Scalar>(
    tape: &mut Tape<S>,
    p: TensorId,
    goal: Vec3<S>,
    v_max_target: S,
) -> TensorId {
    let g = tape.leaf(goal.to_array().to_vec(), &[3]);
    let d = tape.sub(g, p);
    clip_norm_tape(tape, d, v_max_target)
}

/// Mean of the stored velocity nodes (the most recent `window` of them).
pub fn moving_average_tape<S: Scalar>(tape: &mut Tape<S>, history: &[TensorId]) -> TensorId {
    assert!(!history.is_empty(), "velocity history must not be empty");
    let mut acc = history[0];
    for &v in &history[1..] {
        acc = tape.add(acc, v);
    }
    tape.scale(acc, S::one() / S::c(history.len() as f64))
}

/// SmoothL1 of (v_bar - v_star), summed over components.
pub fn tracking_loss_tape<S: Scalar>(tape: &mut Tape<S>, v_bar: TensorId, v_star: TensorId) -> TensorId {
    let d = tape.sub(v_bar, v_star);
    let s = tape.smooth_l1(d);
    tape.sum(s)
}

/// Avoidance and collision penalties from a clearance node
/// `[d_raw, dir_x, dir_y, dir_z]` and the executed velocity.
pub fn safety_losses_tape<S: Scalar>(
    tape: &mut Tape<S>,
    clearance: TensorId,
    v: TensorId,
    cfg: &LossConfig<S>,
) -> (TensorId, TensorId) {
    assert_eq!(tape.numel(clearance), 4, "clearance node must be [d, dir]");
    let d = tape.slice(clearance, 0, 1);
    let d = tape.add_const(d, -cfg.safety_margin);
    let dir = tape.slice(clearance, 1, 3);
    let prod = tape.mul(v, dir);
    let v_dot = tape.sum(prod);
    let k = S::c(APPROACH_SHARPNESS);
    let scaled = tape.scale(v_dot, k);
    let sp = tape.softplus(scaled);
    let v_to_pt = tape.scale(sp, S::one() / k);

    let neg = tape.scale(d, -S::one());
    let gap = tape.add_const(neg, S::one());
    let gap = tape.relu(gap);
    let gap2 = tape.square(gap);
    let avoid = tape.mul(gap2, v_to_pt);

    let ramp = tape.scale(d, -cfg.gamma);
    let barrier = tape.softplus(ramp);
    let collide = tape.mul(barrier, v_to_pt);
    (avoid, collide)
}

/// Squared acceleration and jerk of the command sequence under the nominal
/// control interval. Missing history enters as zero commands.
pub fn smoothness_losses_tape<S: Scalar>(
    tape: &mut Tape<S>,
    u_t: TensorId,
    u_prev: TensorId,
    u_prev2: TensorId,
    cfg: &LossConfig<S>,
) -> (TensorId, TensorId) {
    let inv_dt = S::one() / cfg.dt_nominal;
    let da = tape.sub(u_t, u_prev);
    let a = tape.scale(da, inv_dt);
    let a2 = tape.square(a);
    let acc = tape.sum(a2);

    let two_prev = tape.scale(u_prev, S::c(2.0));
    let dj = tape.sub(u_t, two_prev);
    let dj = tape.add(dj, u_prev2);
    let j = tape.scale(dj, inv_dt * inv_dt);
    let j2 = tape.square(j);
    let jerk = tape.sum(j2);
    (acc, jerk)
}

/// Squared error between the predicted and executed velocity. The executed
/// velocity is detached: the head chases the simulator, never the reverse.
pub fn vpred_loss_tape<S: Scalar>(tape: &mut Tape<S>, v_hat: TensorId, v_exec: TensorId) -> TensorId {
    let target = tape.detach(v_exec);
    let d = tape.sub(v_hat, target);
    let d2 = tape.square(d);
    tape.sum(d2)
}

/// Weighted per-step total; returns the node and the logged breakdown.
pub fn combine_step_losses<S: Scalar>(
    tape: &mut Tape<S>,
    trk: TensorId,
    avoid: TensorId,
    collide: TensorId,
    acc: TensorId,
    jerk: TensorId,
    vpred: TensorId,
    cfg: &LossConfig<S>,
) -> (TensorId, LossBreakdown<S>) {
    let terms = [
        (trk, cfg.lambda_trk),
        (avoid, cfg.lambda_avoid),
        (collide, cfg.lambda_collide),
        (acc, cfg.lambda_acc),
        (jerk, cfg.lambda_jerk),
        (vpred, cfg.lambda_vp),
    ];
    let mut total = None;
    for (t, w) in terms {
        let wt = tape.scale(t, w);
        total = Some(match total {
            None => wt,
            Some(acc) => tape.add(acc, wt),
        });
    }
    let total = total.unwrap();
    let breakdown = LossBreakdown {
        trk: tape.item(trk),
        avoid: tape.item(avoid),
        collide: tape.item(collide),
        acc: tape.item(acc),
        jerk: tape.item(jerk),
        vpred: tape.item(vpred),
        total: tape.item(total),
    };
    (total, breakdown)
}

/// Mean of per-step totals over the rollout.
pub fn rollout_mean<S: Scalar>(tape: &mut Tape<S>, totals: &[TensorId]) -> TensorId {
    assert!(!totals.is_empty(), "rollout produced no loss terms");
    let all = tape.concat(totals);
    tape.mean(all)
}
