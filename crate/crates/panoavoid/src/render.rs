//! Ground-truth depth synthesis against analytic scenes: equirectangular
//! panoramas, pinhole views, cube faces, sensor noise, and network-input
//! normalization.
//!
//! Rays are cast in f64 regardless of the scalar type so that identical poses
//! always produce identical images. Panorama yaw is decomposed into an integer
//! column shift plus a sub-pixel residual, which makes renders at yaw = 2πk/W
//! exact column rotations of the yaw-0 render.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{direction_from_lonlat, yaw_quaternion, EquirectGrid, Vec3};
use crate::scalar::Scalar;
use crate::tensor::{Tape, TensorId};
use crate::world::{Scene, Shape};

/// Smallest representable depth; keeps values strictly positive after noise.
pub const MIN_DEPTH: f64 = 1e-3;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Front,
    Back,
    Left,
    Right,
    Up,
    Down,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::Front, Face::Back, Face::Left, Face::Right, Face::Up, Face::Down];

    pub fn name(self) -> &'static str {
        match self {
            Face::Front => "front",
            Face::Back => "back",
            Face::Left => "left",
            Face::Right => "right",
            Face::Up => "up",
            Face::Down => "down",
        }
    }

    /// Forward, image-right, image-down axes in the body frame.
    fn basis(self) -> (Vec3<f64>, Vec3<f64>, Vec3<f64>) {
        let x = Vec3::new(1.0, 0.0, 0.0);
        let y = Vec3::new(0.0, 1.0, 0.0);
        let z = Vec3::new(0.0, 0.0, 1.0);
        match self {
            Face::Front => (x, -y, -z),
            Face::Back => (-x, y, -z),
            Face::Left => (y, x, -z),
            Face::Right => (-y, -x, -z),
            Face::Up => (z, -y, x),
            Face::Down => (-z, -y, -x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CameraModel {
    Equirect,
    Pinhole { fov: f64 },
    CubeFace { face: Face },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage<S> {
    pub height: usize,
    pub width: usize,
    pub values: Vec<S>,
    pub d_max: S,
    pub camera: CameraModel,
}

impl<S: Scalar> DepthImage<S> {
    pub fn mean(&self) -> S {
        let sum = self.values.iter().fold(S::zero(), |a, &b| a + b);
        sum / S::c(self.values.len() as f64)
    }
}


#[derive(Copy, Clone, Debug, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Noise std dev as a fraction of the image's mean depth.
    pub gamma: f64,
    pub seed: u64,
}

fn ray_sphere(o: Vec3<f64>, d: Vec3<f64>, center: Vec3<f64>, radius: f64) -> Option<f64> {
    let oc = center - o;
    let b = d.dot(oc);
    let disc = b * b - (oc.dot(oc) - radius * radius);
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = b - sq;
    if t0 > MIN_DEPTH {
        return Some(t0);
    }
    let t1 = b + sq;
    if t1 > MIN_DEPTH {
        return Some(t1);
    }
    None
}

fn ray_capsule(o: Vec3<f64>, d: Vec3<f64>, center: Vec3<f64>, radius: f64, half_height: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > MIN_DEPTH && best.map_or(true, |b| t < b) {
            best = Some(t);
        }
    };

    // Cylinder wall, valid while the hit's z stays within the segment band.
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-12 {
        let ox = o.x - center.x;
        let oy = o.y - center.y;
        let b = -(d.x * ox + d.y * oy);
        let c = ox * ox + oy * oy - radius * radius;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(b - sq) / a, (b + sq) / a] {
                let z = o.z + t * d.z;
                if (z - center.z).abs() <= half_height {
                    consider(t);
                }
            }
        }
    }

    // End caps, valid strictly beyond the band.
    for sign in [-1.0, 1.0] {
        let cap = Vec3::new(center.x, center.y, center.z + sign * half_height);
        let oc = cap - o;
        let b = d.dot(oc);
        let disc = b * b - (oc.dot(oc) - radius * radius);
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [b - sq, b + sq] {
                let z = o.z + t * d.z;
                if sign * (z - cap.z) >= 0.0 {
                    consider(t);
                }
            }
        }
    }
    best
}

/// Nearest positive hit distance along a unit ray, saturating at d_max.
fn cast_ray<S: Scalar>(scene: &Scene<S>, o: Vec3<f64>, d: Vec3<f64>, d_max: f64) -> f64 {
    let mut t_min = d_max;
    for obs in &scene.obstacles {
        let c = Vec3::new(obs.position.x.f(), obs.position.y.f(), obs.position.z.f());
        let hit = match obs.shape {
            Shape::Sphere { radius } => ray_sphere(o, d, c, radius.f()),
            Shape::VerticalCapsule { radius, half_height } => {
                ray_capsule(o, d, c, radius.f(), half_height.f())
            }
        };
        if let Some(t) = hit {
            t_min = t_min.min(t);
        }
    }
    if let Some(gh) = scene.ground_height {
        if d.z < -1e-12 {
            let t = (gh.f() - o.z) / d.z;
            if t > MIN_DEPTH {
                t_min = t_min.min(t);
            }
        }
    }
    t_min.max(MIN_DEPTH)
}

fn assert_above_ground<S: Scalar>(scene: &Scene<S>, position: Vec3<S>) {
    if let Some(gh) = scene.ground_height {
        assert!(position.z > gh, "render position {} is not above ground {}", position.z.f(), gh.f());
    }
}

pub fn render_equirect<S: Scalar>(
    scene: &Scene<S>,
    position: Vec3<S>,
    yaw: f64,
    grid: EquirectGrid,
    d_max: S,
) -> DepthImage<S> {
    assert_above_ground(scene, position);
    let w = grid.width;
    let h = grid.height;

    // Split yaw into whole-column turns plus a residual; snap residuals born
    // from float reconstruction of 2πk/W back to zero.
    let cols_per_turn = w as f64 / (2.0 * std::f64::consts::PI);
    let k_float = yaw * cols_per_turn;
    let k = k_float.round();
    let mut delta = (k_float - k) / cols_per_turn;
    if delta.abs() < 1e-9 {
        delta = 0.0;
    }
    let shift = (k as i64).rem_euclid(w as i64) as usize;

    let o = Vec3::new(position.x.f(), position.y.f(), position.z.f());
    let q = yaw_quaternion(delta);
    let dmax = d_max.f();
    let mut base = vec![S::zero(); h * w];
    for row in 0..h {
        for col in 0..w {
            let (lon, lat) = grid.lonlat_of_pixel(row as f64, col as f64);
            let dir = q.rotate(direction_from_lonlat(lon, lat));
            base[row * w + col] = S::c(cast_ray(scene, o, dir, dmax));
        }
    }
    if shift != 0 {
        let mut shifted = vec![S::zero(); h * w];
        for row in 0..h {
            for col in 0..w {
                shifted[row * w + col] = base[row * w + (col + shift) % w];
            }
        }
        base = shifted;
    }
    DepthImage { height: h, width: w, values: base, d_max, camera: CameraModel::Equirect }
}

fn render_directional<S: Scalar>(
    scene: &Scene<S>,
    position: Vec3<S>,
    yaw: f64,
    fov: f64,
    height: usize,
    width: usize,
    d_max: S,
    forward: Vec3<f64>,
    right: Vec3<f64>,
    down: Vec3<f64>,
) -> Vec<S> {
    let o = Vec3::new(position.x.f(), position.y.f(), position.z.f());
    let q = yaw_quaternion(yaw);
    let tan_half = (fov * 0.5).tan();
    let dmax = d_max.f();
    let mut values = vec![S::zero(); height * width];
    for row in 0..height {
        let v = ((row as f64 + 0.5) / height as f64 * 2.0 - 1.0) * tan_half;
        for col in 0..width {
            let u = ((col as f64 + 0.5) / width as f64 * 2.0 - 1.0) * tan_half;
            let dir = (forward + right.scale(u) + down.scale(v)).normalized();
            values[row * width + col] = S::c(cast_ray(scene, o, q.rotate(dir), dmax));
        }
    }
    values
}

pub fn render_pinhole<S: Scalar>(
    scene: &Scene<S>,
    position: Vec3<S>,
    yaw: f64,
    fov: f64,
    height: usize,
    width: usize,
    d_max: S,
) -> DepthImage<S> {
    assert_above_ground(scene, position);
    assert!(fov > 0.0 && fov < std::f64::consts::PI, "pinhole fov must be in (0, pi)");
    let (f, r, d) = Face::Front.basis();
    let values = render_directional(scene, position, yaw, fov, height, width, d_max, f, r, d);
    DepthImage { height, width, values, d_max, camera: CameraModel::Pinhole { fov } }
}

pub fn render_cubefaces<S: Scalar>(
    scene: &Scene<S>,
    position: Vec3<S>,
    yaw: f64,
    face_res: usize,
    d_max: S,
) -> [DepthImage<S>; 6] {
    assert_above_ground(scene, position);
    let fov = std::f64::consts::FRAC_PI_2;
    Face::ALL.map(|face| {
        let (f, r, d) = face.basis();
        let values = render_directional(scene, position, yaw, fov, face_res, face_res, d_max, f, r, d);
        DepthImage {
            height: face_res,
            width: face_res,
            values,
            d_max,
            camera: CameraModel::CubeFace { face },
        }
    })
}

/// Additive Gaussian noise with std dev γ·mean(D), re-clipped to (0, d_max].
pub fn add_noise<S: Scalar>(image: &DepthImage<S>, cfg: NoiseConfig) -> DepthImage<S> {
    assert!(cfg.gamma >= 0.0, "noise level must be non-negative");
    if cfg.gamma == 0.0 {
        return image.clone();
    }
    let sigma = cfg.gamma * image.mean().f();
    let normal = Normal::new(0.0, sigma).expect("valid noise std dev");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dmax = image.d_max.f();
    let values = image
        .values
        .iter()
        .map(|&v| S::c((v.f() + normal.sample(&mut rng)).clamp(MIN_DEPTH, dmax)))
        .collect();
    DepthImage { values, ..image.clone() }
}

/// Detached [1, H, W] network input scaled to (0, 1].
pub fn normalize_for_net<S: Scalar>(tape: &mut Tape<S>, image: &DepthImage<S>) -> TensorId {
    let inv = S::one() / image.d_max;
    let data: Vec<S> = image.values.iter().map(|&v| v * inv).collect();
    tape.leaf(data, &[1, image.height, image.width])
}

/// Channel-stacked detached input [N, H, W] for multi-view networks.
pub fn normalize_stack_for_net<S: Scalar>(tape: &mut Tape<S>, images: &[DepthImage<S>]) -> TensorId {
    assert!(!images.is_empty(), "need at least one image to stack");
    let h = images[0].height;
    let w = images[0].width;
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        assert_eq!((img.height, img.width), (h, w), "stacked images must share dimensions");
        let inv = S::one() / img.d_max;
        data.extend(img.values.iter().map(|&v| v * inv));
    }
    tape.leaf(data, &[images.len(), h, w])
}

/// 16-bit binary PGM; sample value = round(65535·depth/d_max), big-endian.
pub fn to_pgm<S: Scalar>(image: &DepthImage<S>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", image.width, image.height).into_bytes();
    let dmax = image.d_max.f();
    for &v in &image.values {
        let q = (65535.0 * v.f() / dmax).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}
