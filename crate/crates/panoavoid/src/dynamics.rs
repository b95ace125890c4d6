//! Point-mass UAV with a velocity-tracking controller and first-order
//! acceleration lag, integrated with semi-implicit Euler. The same update is
//! available as plain vector math and as tape ops so rollouts can be
//! differentiated end to end.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{yaw_quaternion, Vec3};
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorId};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavState<S> {
    pub p: Vec3<S>,
    pub v: Vec3<S>,
    pub a_real: Vec3<S>,
    /// Heading, fixed for the duration of an episode.
    pub yaw: S,
}

impl<S: Scalar> UavState<S> {
    pub fn at_rest(p: Vec3<S>, yaw: S) -> Self {
        UavState { p, v: Vec3::zero(), a_real: Vec3::zero(), yaw }
    }
}

#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig<S> {
    /// Mean control interval (s); ~15 Hz.
    pub dt_mean: S,
    pub dt_std: S,
    /// Velocity-tracking time constant (s).
    pub tau_v: S,
    /// Acceleration-lag time constant (s).
    pub tau_att: S,
    pub a_max: S,
    pub v_max: S,
}

impl<S: Scalar> Default for SimConfig<S> {
    fn default() -> Self {
        SimConfig {
            dt_mean: S::c(1.0 / 15.0),
            dt_std: S::c(0.1 / 15.0),
            tau_v: S::c(0.3),
            tau_att: S::c(0.15),
            a_max: S::c(10.0),
            v_max: S::c(6.0),
        }
    }
}

impl<S: Scalar> SimConfig<S> {
    pub fn validate(&self) {
        assert!(self.dt_mean > S::zero(), "dt_mean must be positive");
        assert!(self.dt_std >= S::zero(), "dt_std must be non-negative");
        assert!(self.tau_v > S::zero() && self.tau_att > S::zero(), "time constants must be positive");
        assert!(self.a_max > S::zero() && self.v_max > S::zero(), "limits must be positive");
    }
}

/// Gaussian control interval clamped to [0.5, 1.5]·dt_mean.
pub fn sample_dt<S: Scalar, R: Rng>(cfg: &SimConfig<S>, rng: &mut R) -> S {
    let mean = cfg.dt_mean.f();
    let std = cfg.dt_std.f();
    let raw = if std > 0.0 {
        Normal::new(mean, std).expect("valid dt distribution").sample(rng)
    } else {
        mean
    };
    S::c(raw.clamp(0.5 * mean, 1.5 * mean))
}

/// Norm limiter that is the identity up to 0.9·limit and saturates smoothly
/// toward `limit` beyond it; C¹ everywhere.
pub fn clip_norm<S: Scalar>(x: Vec3<S>, limit: S) -> Vec3<S> {
    let n = x.norm();
    let knee = S::c(0.9) * limit;
    if n <= knee {
        return x;
    }
    let span = S::c(0.1) * limit;
    let clipped = knee + span * ((n - knee) / span).tanh();
    x.scale(clipped / n)
}

/// Tape counterpart of [`clip_norm`]; inside the knee it returns the input
/// node untouched, recording nothing.
pub fn clip_norm_tape<S: Scalar>(tape: &mut Tape<S>, x: TensorId, limit: S) -> TensorId {
    let d = tape.data(x);
    let n2 = d.iter().fold(S::zero(), |a, &b| a + b * b);
    let knee = S::c(0.9) * limit;
    if n2 <= knee * knee {
        return x;
    }
    let span = S::c(0.1) * limit;
    let sq = tape.square(x);
    let ssum = tape.sum(sq);
    let n = tape.sqrt(ssum);
    let arg = tape.add_const(n, -knee);
    let arg = tape.scale(arg, S::one() / span);
    let th = tape.tanh(arg);
    let sat = tape.scale(th, span);
    let clipped = tape.add_const(sat, knee);
    let factor = tape.div(clipped, n);
    tape.mul_scalar_t(x, factor)
}

/// World-frame rotation of a body-frame vector by a fixed heading, as a
/// constant 3x3 matrix on the tape.
fn yaw_matrix_tape<S: Scalar>(tape: &mut Tape<S>, yaw: S) -> TensorId {
    let (s, c) = (yaw.sin(), yaw.cos());
    tape.leaf(
        vec![c, -s, S::zero(), s, c, S::zero(), S::zero(), S::zero(), S::one()],
        &[3, 3],
    )
}

/// One control step on plain state.
pub fn step<S: Scalar>(state: &UavState<S>, u_body: Vec3<S>, dt: S, cfg: &SimConfig<S>) -> UavState<S> {
    let u_clip = clip_norm(u_body, cfg.v_max);
    let u_world = yaw_quaternion(state.yaw).rotate(u_clip);
    let a_des = clip_norm((u_world - state.v).scale(S::one() / cfg.tau_v), cfg.a_max);
    let a_real = state.a_real + (a_des - state.a_real).scale(dt / cfg.tau_att);
    let v = state.v + a_real.scale(dt);
    let p = state.p + v.scale(dt);
    UavState { p, v, a_real, yaw: state.yaw }
}

/// One control step on tape tensors; `p`, `v`, `a_real`, and `u_body` are
/// 3-vectors, the heading is a per-episode constant.
#[allow(clippy::too_many_arguments)]
pub fn step_tape<S: Scalar>(
    tape: &mut Tape<S>,
    p: TensorId,
    v: TensorId,
    a_real: TensorId,
    yaw: S,
    u_body: TensorId,
    dt: S,
    cfg: &SimConfig<S>,
) -> (TensorId, TensorId, TensorId) {
    let u_clip = clip_norm_tape(tape, u_body, cfg.v_max);
    let rot = yaw_matrix_tape(tape, yaw);
    let u_world = tape.linear(rot, u_clip, None);
    let diff = tape.sub(u_world, v);
    let a_raw = tape.scale(diff, S::one() / cfg.tau_v);
    let a_des = clip_norm_tape(tape, a_raw, cfg.a_max);
    let a_delta = tape.sub(a_des, a_real);
    let a_step = tape.scale(a_delta, dt / cfg.tau_att);
    let a_next = tape.add(a_real, a_step);
    let v_step = tape.scale(a_next, dt);
    let v_next = tape.add(v, v_step);
    let p_step = tape.scale(v_next, dt);
    let p_next = tape.add(p, p_step);
    (p_next, v_next, a_next)
}
