//! Policy networks: the panoramic SphereConv encoder with a GRU control
//! head, plus the forward-view and multi-view baselines.
//!
//! All three variants share one layout: a conv encoder over the depth image,
//! a visual projection, an observation projection, elementwise-sum fusion, a
//! single GRU cell, and linear heads for the velocity command and the
//! auxiliary velocity prediction.

use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{clip_norm, clip_norm_tape, UavState};
use crate::geometry::{direction_from_lonlat, up_vector, yaw_quaternion, EquirectGrid, Vec3};
use crate::scalar::Scalar;
use crate::tensor::checkpoint::{self, CheckpointError};
use crate::tensor::{bilinear_taps, Tap, Tape, TensorId};

/// Relative-goal vectors are clamped to this length before entering the net.
pub const D_GOAL_CLAMP: f64 = 10.0;

const LEAKY_SLOPE: f64 = 0.01;

// ── Observation vector ───────────────────────────────────────────────────

/// Body-frame observation fed to the policy alongside the depth image.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationVector<S> {
    /// Goal offset rotated into the body frame, norm-clamped.
    pub d_goal: Vec3<S>,
    /// World velocity rotated into the body frame.
    pub v_body: Vec3<S>,
    /// Body-frame up direction of the attitude.
    pub q_up: Vec3<S>,
    /// Safety radius.
    pub r: S,
}

impl<S: Scalar> ObservationVector<S> {
    /// Flattens to `obs_dim` entries; the 9-wide layout drops the radius.
    pub fn to_vec(&self, obs_dim: usize) -> Vec<S> {
        assert!(obs_dim == 9 || obs_dim == 10, "observation width must be 9 or 10, got {}", obs_dim);
        let mut out = Vec::with_capacity(obs_dim);
        out.extend_from_slice(&self.d_goal.to_array());
        out.extend_from_slice(&self.v_body.to_array());
        out.extend_from_slice(&self.q_up.to_array());
        if obs_dim == 10 {
            out.push(self.r);
        }
        out
    }
}

/// Builds the observation for a state and goal.
pub fn build_observation<S: Scalar>(state: &UavState<S>, goal: Vec3<S>, r: S) -> ObservationVector<S> {
    let q = yaw_quaternion(state.yaw);
    let d_body = q.rotate_inv(goal - state.p);
    ObservationVector {
        d_goal: clip_norm(d_body, S::c(D_GOAL_CLAMP)),
        v_body: q.rotate_inv(state.v),
        q_up: up_vector(q),
        r,
    }
}

/// Observation as a tape node so gradients reach position and velocity.
///
/// Yaw is constant within an episode, so the world-to-body rotation enters
/// as a constant matrix. The up vector of a yaw-only attitude is exactly
/// (0, 0, 1).
pub fn build_observation_tape<S: Scalar>(
    tape: &mut Tape<S>,
    p: TensorId,
    v: TensorId,
    yaw: S,
    goal: Vec3<S>,
    r: S,
    obs_dim: usize,
) -> TensorId {
    assert!(obs_dim == 9 || obs_dim == 10, "observation width must be 9 or 10, got {}", obs_dim);
    let (sin, cos) = (yaw.f().sin(), yaw.f().cos());
    let rot = tape.leaf(
        vec![
            S::c(cos),
            S::c(sin),
            S::zero(),
            S::c(-sin),
            S::c(cos),
            S::zero(),
            S::zero(),
            S::zero(),
            S::one(),
        ],
        &[3, 3],
    );
    let goal_leaf = tape.leaf(goal.to_array().to_vec(), &[3]);
    let d_world = tape.sub(goal_leaf, p);
    let d_body = tape.linear(rot, d_world, None);
    let d_goal = clip_norm_tape(tape, d_body, S::c(D_GOAL_CLAMP));
    let v_body = tape.linear(rot, v, None);
    let mut tail = vec![S::zero(), S::zero(), S::one()];
    if obs_dim == 10 {
        tail.push(r);
    }
    let tail_len = tail.len();
    let tail = tape.leaf(tail, &[tail_len]);
    tape.concat(&[d_goal, v_body, tail])
}

// ── Policy specification ─────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyVariant {
    Panoramic,
    ForwardView,
    Multiview { n_views: usize },
}

/// How the visual and observation embeddings are combined before the GRU.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Sum,
    Concat,
}

/// Where the auxiliary velocity prediction comes from.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxMode {
    /// Second linear head on the GRU hidden state.
    #[default]
    SeparateHead,
    /// The command itself doubles as the prediction.
    Command,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub variant: PolicyVariant,
    pub input_height: usize,
    pub input_width: usize,
    #[serde(default = "default_obs_dim")]
    pub obs_dim: usize,
    #[serde(default)]
    pub fusion: Fusion,
    #[serde(default)]
    pub aux: AuxMode,
}

fn default_obs_dim() -> usize {
    10
}

impl PolicySpec {
    pub fn panoramic(input_height: usize, input_width: usize) -> Self {
        PolicySpec {
            variant: PolicyVariant::Panoramic,
            input_height,
            input_width,
            obs_dim: default_obs_dim(),
            fusion: Fusion::default(),
            aux: AuxMode::default(),
        }
    }

    /// Full-resolution panoramic policy over 64x128 depth.
    pub fn full_panoramic() -> Self {
        Self::panoramic(64, 128)
    }

    /// Reduced 16x32 panoramic policy for fast tests.
    pub fn desk_panoramic() -> Self {
        Self::panoramic(16, 32)
    }

    pub fn forward_view(input_height: usize, input_width: usize) -> Self {
        PolicySpec {
            variant: PolicyVariant::ForwardView,
            input_height,
            input_width,
            obs_dim: default_obs_dim(),
            fusion: Fusion::default(),
            aux: AuxMode::default(),
        }
    }

    pub fn multiview(n_views: usize, face_res: usize) -> Self {
        PolicySpec {
            variant: PolicyVariant::Multiview { n_views },
            input_height: face_res,
            input_width: face_res,
            obs_dim: default_obs_dim(),
            fusion: Fusion::default(),
            aux: AuxMode::default(),
        }
    }

    /// GRU width fixed per variant.
    pub fn hidden(&self) -> usize {
        match self.variant {
            PolicyVariant::Panoramic => 256,
            PolicyVariant::ForwardView => 192,
            PolicyVariant::Multiview { .. } => 384,
        }
    }

    /// Depth channels expected in the input tensor.
    pub fn in_channels(&self) -> usize {
        match self.variant {
            PolicyVariant::Multiview { n_views } => n_views,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.obs_dim != 9 && self.obs_dim != 10 {
            return Err(format!("observation width must be 9 or 10, got {}", self.obs_dim));
        }
        if let PolicyVariant::Multiview { n_views } = self.variant {
            if n_views != 6 && n_views != 4 {
                return Err(format!("multiview expects 6 or 4 views, got {}", n_views));
            }
        }
        conv_plan(self).map(|_| ())
    }
}

// ── Encoder layout ───────────────────────────────────────────────────────

#[derive(Clone, Debug)]
struct LayerPlan {
    sphere: bool,
    circular: bool,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
}

impl LayerPlan {
    fn label(&self) -> String {
        let kind = if self.sphere { "sphereconv2d" } else { "conv2d" };
        format!("{}({},{}x{},s{})", kind, self.out_ch, self.k, self.k, self.stride)
    }
}

struct ChannelSpec {
    sphere: bool,
    circular: bool,
    out_ch: usize,
    k: usize,
    stride: usize,
}

fn channel_schedule(variant: &PolicyVariant) -> Vec<ChannelSpec> {
    let s = |sphere, circular, out_ch, k, stride| ChannelSpec { sphere, circular, out_ch, k, stride };
    match variant {
        PolicyVariant::Panoramic => vec![
            s(true, true, 32, 3, 2),
            s(true, true, 64, 3, 2),
            s(false, true, 64, 3, 1),
            s(false, false, 64, 2, 2),
            s(false, true, 128, 3, 1),
            s(false, true, 128, 3, 1),
        ],
        PolicyVariant::ForwardView => vec![
            s(false, false, 32, 2, 2),
            s(false, false, 64, 3, 1),
            s(false, false, 128, 3, 1),
        ],
        PolicyVariant::Multiview { .. } => vec![
            s(false, false, 256, 3, 2),
            s(false, false, 128, 3, 1),
            s(false, false, 128, 3, 2),
            s(false, false, 128, 3, 1),
            s(false, false, 128, 3, 2),
            s(false, false, 256, 3, 1),
        ],
    }
}

fn conv_plan(spec: &PolicySpec) -> Result<(Vec<LayerPlan>, usize), String> {
    let mut plans = Vec::new();
    let mut c = spec.in_channels();
    let mut h = spec.input_height;
    let mut w = spec.input_width;
    for (i, l) in channel_schedule(&spec.variant).iter().enumerate() {
        let pad = if l.k == 3 { 1 } else { 0 };
        if l.sphere && (h < 2 || w < 4 || w % 2 != 0) {
            return Err(format!("layer {}: {}x{} is too small for spherical sampling", i, h, w));
        }
        if h + 2 * pad < l.k || w + 2 * pad < l.k {
            return Err(format!("layer {}: kernel {} exceeds padded input {}x{}", i, l.k, h, w));
        }
        if l.circular && !l.sphere && w < l.k {
            return Err(format!("layer {}: width {} is too narrow to wrap a {}-wide kernel", i, w, l.k));
        }
        let h_out = (h + 2 * pad - l.k) / l.stride + 1;
        let w_out = (w + 2 * pad - l.k) / l.stride + 1;
        plans.push(LayerPlan {
            sphere: l.sphere,
            circular: l.circular,
            in_ch: c,
            out_ch: l.out_ch,
            k: l.k,
            stride: l.stride,
            h_in: h,
            w_in: w,
            h_out,
            w_out,
        });
        c = l.out_ch;
        h = h_out;
        w = w_out;
    }
    Ok((plans, c * h * w))
}

// ── Spherical sampling ───────────────────────────────────────────────────

/// Continuous equirect coordinates of the 3x3 spherical kernel taps.
///
/// For each output pixel the kernel is a 3x3 grid of directions at fixed
/// angular offsets (one equatorial pixel per step) in the pixel's local
/// tangent frame, mapped back to continuous equirect coordinates. At the
/// equator the taps land exactly on the integer pixel neighborhood.
/// Returned kernel-position major: all output pixels for tap (0,0) first,
/// matching the flattened weight layout.
pub fn sphere_sample_coords(h_in: usize, w_in: usize, stride: usize) -> (Vec<[f64; 2]>, usize, usize) {
    assert!(stride >= 1, "stride must be >= 1");
    let h_out = (h_in + 2 - 3) / stride + 1;
    let w_out = (w_in + 2 - 3) / stride + 1;
    let grid = EquirectGrid::new(h_in, w_in);
    let delta = 2.0 * std::f64::consts::PI / w_in as f64;
    let plane = h_out * w_out;
    let mut coords = vec![[0.0f64; 2]; 9 * plane];
    for ro in 0..h_out {
        for co in 0..w_out {
            let (lon, lat) = grid.lonlat_of_pixel((ro * stride) as f64, (co * stride) as f64);
            let taps = tap_coords_at(&grid, lon, lat, delta);
            for (k, t) in taps.iter().enumerate() {
                coords[k * plane + ro * w_out + co] = *t;
            }
        }
    }
    (coords, h_out, w_out)
}

/// The nine kernel tap coordinates around one center direction, kernel-row
/// major (top-left first).
pub fn sphere_tap_coords(height: usize, width: usize, lon: f64, lat: f64) -> [[f64; 2]; 9] {
    let grid = EquirectGrid::new(height, width);
    tap_coords_at(&grid, lon, lat, 2.0 * std::f64::consts::PI / width as f64)
}

fn tap_coords_at(grid: &EquirectGrid, lon: f64, lat: f64, delta: f64) -> [[f64; 2]; 9] {
    let center: Vec3<f64> = direction_from_lonlat(lon, lat);
    let east = Vec3::new(-lon.sin(), lon.cos(), 0.0);
    let north = Vec3::new(-lat.sin() * lon.cos(), -lat.sin() * lon.sin(), lat.cos());
    let mut out = [[0.0f64; 2]; 9];
    for ki in 0..3usize {
        for kj in 0..3usize {
            let up = (1.0 - ki as f64) * delta;
            let right = (kj as f64 - 1.0) * delta;
            // Direction at latitude `up`, longitude `right` of the local
            // frame; the basis rotation carries it to the pixel's position.
            let dir = center.scale(up.cos() * right.cos())
                + east.scale(up.cos() * right.sin())
                + north.scale(up.sin());
            let (row, col) = grid.direction_to_pixel(dir);
            out[ki * 3 + kj] = [row, col];
        }
    }
    out
}

/// Precomputed bilinear taps for [`sphere_conv2d_with_taps`].
pub fn sphere_conv_taps<S: Scalar>(h_in: usize, w_in: usize, stride: usize) -> (Rc<Vec<Tap<S>>>, usize, usize) {
    let (coords, h_out, w_out) = sphere_sample_coords(h_in, w_in, stride);
    (Rc::new(bilinear_taps(&coords, h_in, w_in, true)), h_out, w_out)
}

/// Spherical 3x3 convolution: gnomonic tap gather followed by a dense
/// weighted sum. Weight shape [O, C, 3, 3], input [C, H, W].
pub fn sphere_conv2d<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    w: TensorId,
    b: TensorId,
    stride: usize,
) -> TensorId {
    let xs = tape.shape(x).to_vec();
    assert_eq!(xs.len(), 3, "sphere_conv2d: input must be [C, H, W], got {:?}", xs);
    let (taps, h_out, w_out) = sphere_conv_taps(xs[1], xs[2], stride);
    sphere_conv2d_with_taps(tape, x, w, b, taps, h_out, w_out)
}

pub fn sphere_conv2d_with_taps<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    w: TensorId,
    b: TensorId,
    taps: Rc<Vec<Tap<S>>>,
    h_out: usize,
    w_out: usize,
) -> TensorId {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(w).to_vec();
    assert_eq!(ws.len(), 4, "sphere_conv2d: weight must be [O, C, 3, 3], got {:?}", ws);
    assert_eq!(ws[1], xs[0], "sphere_conv2d: input has {} channels, weight expects {}", xs[0], ws[1]);
    assert_eq!((ws[2], ws[3]), (3, 3), "sphere_conv2d: kernel must be 3x3");
    let (c, o) = (xs[0], ws[0]);
    let hw = h_out * w_out;
    assert_eq!(taps.len(), 9 * hw, "sphere_conv2d: tap count {} != 9*{}", taps.len(), hw);
    let sampled = tape.grid_sample_taps(x, taps, &[c * 9, hw]);
    let prod = tape.matmul(w, sampled, o, c * 9, hw);
    let biased = tape.add_bias(prod, b);
    tape.reshape(biased, &[o, h_out, w_out])
}

// ── Parameters ───────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct ParamTensor<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Rc<Vec<S>>,
}

/// Named parameter set backing a policy. Tensors are shared with tapes via
/// reference counting; training replaces the buffers between rollouts.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    pub entries: Vec<ParamTensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<S>) {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "parameter {} shape mismatch", name);
        self.entries.push(ParamTensor { name: name.to_string(), shape, data: Rc::new(data) });
    }

    pub fn index_of(&self, name: &str) -> usize {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .unwrap_or_else(|| panic!("no parameter named {}", name))
    }

    pub fn get(&self, name: &str) -> &ParamTensor<S> {
        &self.entries[self.index_of(name)]
    }

    /// Mutable view of one tensor's values (copy-on-write if a tape still
    /// holds the old buffer).
    pub fn data_mut(&mut self, i: usize) -> &mut Vec<S> {
        Rc::make_mut(&mut self.entries[i].data)
    }

    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Registers every tensor on a fresh tape, in order, and seals them as
    /// surviving truncation. Must be the first thing done to the tape.
    pub fn register(&self, tape: &mut Tape<S>, trainable: bool) -> Vec<TensorId> {
        let ids = self
            .entries
            .iter()
            .map(|e| tape.shared_leaf(e.data.clone(), &e.shape, trainable))
            .collect();
        tape.seal_params();
        ids
    }
}

// ── Policy network ───────────────────────────────────────────────────────

pub struct PolicyNet<S: Scalar> {
    pub spec: PolicySpec,
    pub store: ParamStore<S>,
    plan: Vec<LayerPlan>,
    taps: Vec<Option<Rc<Vec<Tap<S>>>>>,
    flat_dim: usize,
}

impl<S: Scalar> PolicyNet<S> {
    /// Fresh network with uniform fan-in initialization.
    pub fn init<R: Rng>(spec: PolicySpec, rng: &mut R) -> Self {
        spec.validate().unwrap_or_else(|e| panic!("invalid policy spec: {}", e));
        let (plan, flat_dim) = conv_plan(&spec).unwrap();
        let hidden = spec.hidden();
        let gru_in = match spec.fusion {
            Fusion::Sum => hidden,
            Fusion::Concat => 2 * hidden,
        };

        let mut store = ParamStore::default();
        let uniform = |n: usize, bound: f64, rng: &mut R| -> Vec<S> {
            (0..n).map(|_| S::c(rng.gen_range(-bound..bound))).collect()
        };
        for (i, l) in plan.iter().enumerate() {
            let fan_in = l.in_ch * l.k * l.k;
            let bound = (1.0 / fan_in as f64).sqrt();
            let n = l.out_ch * fan_in;
            let w = uniform(n, bound, rng);
            store.push(&format!("enc{}.weight", i), vec![l.out_ch, l.in_ch, l.k, l.k], w);
            store.push(&format!("enc{}.bias", i), vec![l.out_ch], vec![S::zero(); l.out_ch]);
        }
        let vis_bound = (1.0 / flat_dim as f64).sqrt();
        let w = uniform(hidden * flat_dim, vis_bound, rng);
        store.push("vis_proj.weight", vec![hidden, flat_dim], w);
        store.push("vis_proj.bias", vec![hidden], vec![S::zero(); hidden]);
        let obs_bound = (1.0 / spec.obs_dim as f64).sqrt();
        let w = uniform(hidden * spec.obs_dim, obs_bound, rng);
        store.push("obs_proj.weight", vec![hidden, spec.obs_dim], w);
        store.push("obs_proj.bias", vec![hidden], vec![S::zero(); hidden]);
        let gru_bound = 1.0 / (hidden as f64).sqrt();
        let w = uniform(3 * hidden * gru_in, gru_bound, rng);
        store.push("gru.w_ih", vec![3 * hidden, gru_in], w);
        let w = uniform(3 * hidden * hidden, gru_bound, rng);
        store.push("gru.w_hh", vec![3 * hidden, hidden], w);
        let b = uniform(3 * hidden, gru_bound, rng);
        store.push("gru.b_ih", vec![3 * hidden], b);
        let b = uniform(3 * hidden, gru_bound, rng);
        store.push("gru.b_hh", vec![3 * hidden], b);
        let head_bound = (1.0 / hidden as f64).sqrt();
        let w = uniform(3 * hidden, head_bound, rng);
        store.push("head_u.weight", vec![3, hidden], w);
        store.push("head_u.bias", vec![3], vec![S::zero(); 3]);
        if spec.aux == AuxMode::SeparateHead {
            let w = uniform(3 * hidden, head_bound, rng);
            store.push("head_v.weight", vec![3, hidden], w);
            store.push("head_v.bias", vec![3], vec![S::zero(); 3]);
        }

        let taps = plan
            .iter()
            .map(|l| l.sphere.then(|| sphere_conv_taps::<S>(l.h_in, l.w_in, l.stride).0))
            .collect();
        PolicyNet { spec, store, plan, taps, flat_dim }
    }

    pub fn param_count(&self) -> usize {
        self.store.total_params()
    }

    /// Output shape of every stage, for structural checks.
    pub fn layer_output_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let hidden = self.spec.hidden();
        let mut out: Vec<(String, Vec<usize>)> = self
            .plan
            .iter()
            .map(|l| (l.label(), vec![l.out_ch, l.h_out, l.w_out]))
            .collect();
        out.push(("flatten".into(), vec![self.flat_dim]));
        out.push(("vis_proj".into(), vec![hidden]));
        out.push((format!("obs_proj({}->{})", self.spec.obs_dim, hidden), vec![hidden]));
        out.push(("gru_cell".into(), vec![hidden]));
        out.push(("head_u".into(), vec![3]));
        if self.spec.aux == AuxMode::SeparateHead {
            out.push(("head_v".into(), vec![3]));
        }
        out
    }

    /// Zero hidden state on the tape.
    pub fn initial_hidden(&self, tape: &mut Tape<S>) -> TensorId {
        tape.leaf(vec![S::zero(); self.spec.hidden()], &[self.spec.hidden()])
    }

    fn pid(&self, ids: &[TensorId], name: &str) -> TensorId {
        ids[self.store.index_of(name)]
    }

    /// One control step: depth [C, H, W] and observation in, velocity
    /// command, velocity prediction, and next hidden state out.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        params: &[TensorId],
        depth: TensorId,
        obs: TensorId,
        h: TensorId,
    ) -> (TensorId, TensorId, TensorId) {
        assert_eq!(params.len(), self.store.entries.len(), "parameter id list does not match store");
        let expect = [self.spec.in_channels(), self.spec.input_height, self.spec.input_width];
        assert_eq!(tape.shape(depth), expect.as_slice(), "depth input shape mismatch");
        assert_eq!(tape.numel(obs), self.spec.obs_dim, "observation width mismatch");
        assert_eq!(tape.numel(h), self.spec.hidden(), "hidden state width mismatch");

        let slope = S::c(LEAKY_SLOPE);
        let mut x = depth;
        for (i, l) in self.plan.iter().enumerate() {
            let w = self.pid(params, &format!("enc{}.weight", i));
            let b = self.pid(params, &format!("enc{}.bias", i));
            x = if l.sphere {
                let taps = self.taps[i].clone().unwrap();
                sphere_conv2d_with_taps(tape, x, w, b, taps, l.h_out, l.w_out)
            } else {
                let pad = if l.k == 3 { 1 } else { 0 };
                tape.conv2d(x, w, b, l.stride, (pad, pad), l.circular)
            };
            x = tape.leaky_relu(x, slope);
        }

        let w = self.pid(params, "vis_proj.weight");
        let b = self.pid(params, "vis_proj.bias");
        let vis = tape.linear(w, x, Some(b));
        let w = self.pid(params, "obs_proj.weight");
        let b = self.pid(params, "obs_proj.bias");
        let obs_e = tape.linear(w, obs, Some(b));
        let fused = match self.spec.fusion {
            Fusion::Sum => tape.add(vis, obs_e),
            Fusion::Concat => tape.concat(&[vis, obs_e]),
        };

        let h_next = tape.gru_cell(
            fused,
            h,
            self.pid(params, "gru.w_ih"),
            self.pid(params, "gru.w_hh"),
            self.pid(params, "gru.b_ih"),
            self.pid(params, "gru.b_hh"),
        );

        let w = self.pid(params, "head_u.weight");
        let b = self.pid(params, "head_u.bias");
        let u = tape.linear(w, h_next, Some(b));
        let v_hat = match self.spec.aux {
            AuxMode::SeparateHead => {
                let w = self.pid(params, "head_v.weight");
                let b = self.pid(params, "head_v.bias");
                tape.linear(w, h_next, Some(b))
            }
            AuxMode::Command => u,
        };
        (u, v_hat, h_next)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let spec = serde_json::to_value(&self.spec)?;
        let params: Vec<(String, Vec<usize>, &[S])> = self
            .store
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.shape.clone(), e.data.as_slice()))
            .collect();
        checkpoint::save(path, spec, &params)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let loaded = checkpoint::load(path)?;
        let spec: PolicySpec = serde_json::from_value(loaded.spec)?;
        spec.validate().map_err(CheckpointError::Format)?;
        let mut net = Self::init(spec, &mut ChaCha8Rng::seed_from_u64(0));
        if loaded.params.len() != net.store.entries.len() {
            return Err(CheckpointError::Format(format!(
                "checkpoint has {} tensors, spec expects {}",
                loaded.params.len(),
                net.store.entries.len()
            )));
        }
        for (i, (name, shape, data)) in loaded.params.into_iter().enumerate() {
            let entry = &net.store.entries[i];
            if entry.name != name || entry.shape != shape {
                return Err(CheckpointError::Format(format!(
                    "tensor {} ({:?}) does not match expected {} ({:?})",
                    name, shape, entry.name, entry.shape
                )));
            }
            *net.store.data_mut(i) = data.into_iter().map(|v| S::c(v as f64)).collect();
        }
        Ok(net)
    }
}
