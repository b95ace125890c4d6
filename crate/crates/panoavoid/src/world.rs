//! Analytic obstacle scenes: spheres, vertical capsules, and a ground plane,
//! each with closed-form signed clearance. Scenes are plain values; motion
//! stepping returns a new scene so trials can fork freely.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scalar::Scalar;
use crate::tensor::{Surface, Tape, TensorId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape<S> {
    Sphere { radius: S },
    VerticalCapsule { radius: S, half_height: S },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionModel<S> {
    Static,
    Linear {
        velocity: Vec3<S>,
        respawn_radius: S,
    },
    Approach {
        target: Vec3<S>,
        speed: S,
    },
    WaypointLoop {
        points: Vec<Vec3<S>>,
        speed: S,
        #[serde(default)]
        next: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle<S> {
    pub shape: Shape<S>,
    pub position: Vec3<S>,
    pub motion: MotionModel<S>,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb<S> {
    pub min: Vec3<S>,
    pub max: Vec3<S>,
}

impl<S: Scalar> Aabb<S> {
    pub fn center(&self) -> Vec3<S> {
        (self.min + self.max).scale(S::c(0.5))
    }

    pub fn contains(&self, p: Vec3<S>) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn clamp(&self, p: Vec3<S>) -> Vec3<S> {
        Vec3::new(
            p.x.max(self.min.x).min(self.max.x),
            p.y.max(self.min.y).min(self.max.y),
            p.z.max(self.min.z).min(self.max.z),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene<S> {
    pub obstacles: Vec<Obstacle<S>>,
    pub ground_height: Option<S>,
    pub bounds: Aabb<S>,
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("scene io: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Copy, Clone, Debug)]
pub struct Clearance<S> {
    /// Signed distance from the query point to the nearest surface.
    pub dist: S,
    /// Unit vector from the query point toward the nearest obstacle.
    pub dir: Vec3<S>,
}

/// Canonical closest-surface query against one primitive, shared by the plain
/// and the taped clearance paths so both always pick the same branch.
enum Support<S> {
    Point { m: S, u: Vec3<S> },
    Line { m: S, u: Vec3<S> },
}

fn support<S: Scalar>(shape: &Shape<S>, center: Vec3<S>, p: Vec3<S>) -> (S, Support<S>) {
    match *shape {
        Shape::Sphere { radius } => {
            let rel = p - center;
            let mut m = rel.norm();
            let u = if m.f() < 1e-9 {
                m = S::c(1e-9);
                Vec3::new(S::one(), S::zero(), S::zero())
            } else {
                rel.scale(S::one() / m)
            };
            (m - radius, Support::Point { m, u })
        }
        Shape::VerticalCapsule { radius, half_height } => {
            let dz = (p.z - center.z).max(-half_height).min(half_height);
            if (p.z - center.z).abs() <= half_height {
                let rel = Vec3::new(p.x - center.x, p.y - center.y, S::zero());
                let mut m = rel.norm();
                let u = if m.f() < 1e-9 {
                    m = S::c(1e-9);
                    Vec3::new(S::one(), S::zero(), S::zero())
                } else {
                    rel.scale(S::one() / m)
                };
                (m - radius, Support::Line { m, u })
            } else {
                let end = Vec3::new(center.x, center.y, center.z + dz);
                let rel = p - end;
                let mut m = rel.norm();
                let u = if m.f() < 1e-9 {
                    m = S::c(1e-9);
                    Vec3::new(S::one(), S::zero(), S::zero())
                } else {
                    rel.scale(S::one() / m)
                };
                (m - radius, Support::Point { m, u })
            }
        }
    }
}

impl<S: Scalar> Scene<S> {
    pub fn empty(bounds: Aabb<S>, ground_height: Option<S>) -> Self {
        Scene { obstacles: Vec::new(), ground_height, bounds }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        for (i, o) in self.obstacles.iter().enumerate() {
            let ok = match o.shape {
                Shape::Sphere { radius } => radius > S::zero(),
                Shape::VerticalCapsule { radius, half_height } => {
                    radius > S::zero() && half_height >= S::zero()
                }
            };
            if !ok {
                return Err(WorldError::Invalid(format!("obstacle {i} has a non-positive size")));
            }
            let speed_ok = match &o.motion {
                MotionModel::Approach { speed, .. } => *speed >= S::zero(),
                MotionModel::WaypointLoop { speed, points, next } => {
                    *speed >= S::zero() && (points.is_empty() || *next < points.len())
                }
                _ => true,
            };
            if !speed_ok {
                return Err(WorldError::Invalid(format!("obstacle {i} has an invalid motion model")));
            }
        }
        let b = &self.bounds;
        if b.min.x > b.max.x || b.min.y > b.max.y || b.min.z > b.max.z {
            return Err(WorldError::Invalid("bounds min exceeds max".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)?;
        let scene: Scene<S> = serde_json::from_str(&text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<(), WorldError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Task anchor used for goal placement and obstacle respawns.
    pub fn anchor(&self) -> Vec3<S> {
        self.bounds.center()
    }
}

/// Signed distance and direction to the nearest surface. Ties between
/// obstacles keep the lowest index; the ground only wins outright.
pub fn clearance<S: Scalar>(scene: &Scene<S>, p: Vec3<S>) -> Clearance<S> {
    let (dist, dir, _) = clearance_impl(scene, p);
    Clearance { dist, dir }
}

fn clearance_impl<S: Scalar>(scene: &Scene<S>, p: Vec3<S>) -> (S, Vec3<S>, Surface<S>) {
    assert!(
        !scene.obstacles.is_empty() || scene.ground_height.is_some(),
        "clearance query against an empty scene"
    );
    let mut best: Option<(S, Vec3<S>, Surface<S>)> = None;
    for o in &scene.obstacles {
        let (d, sup) = support(&o.shape, o.position, p);
        if best.as_ref().map_or(true, |(bd, _, _)| d < *bd) {
            let (dir, surf) = match sup {
                Support::Point { m, u } => (-u, Surface::Point { m, u: u.to_array() }),
                Support::Line { m, u } => (-u, Surface::Line { m, u: u.to_array() }),
            };
            best = Some((d, dir, surf));
        }
    }
    if let Some(gh) = scene.ground_height {
        let d = p.z - gh;
        if best.as_ref().map_or(true, |(bd, _, _)| d < *bd) {
            let normal = [S::zero(), S::zero(), S::one()];
            best = Some((d, Vec3::new(S::zero(), S::zero(), -S::one()), Surface::Plane { normal }));
        }
    }
    best.unwrap()
}

/// Tape node [dist, dir_x, dir_y, dir_z] for the nearest surface, branch
/// chosen from the current value of `p` on the tape.
pub fn clearance_node<S: Scalar>(tape: &mut Tape<S>, scene: &Scene<S>, p: TensorId) -> TensorId {
    assert_eq!(tape.numel(p), 3, "clearance_node expects a 3-vector position");
    let pd = tape.data(p);
    let pv = Vec3::new(pd[0], pd[1], pd[2]);
    let (dist, dir, surf) = clearance_impl(scene, pv);
    tape.surface_dist(p, [dist, dir.x, dir.y, dir.z], surf)
}

pub fn in_collision<S: Scalar>(scene: &Scene<S>, p: Vec3<S>, r_uav: S) -> bool {
    clearance(scene, p).dist < r_uav
}

/// Advances every obstacle by its motion model.
pub fn step_obstacles<S: Scalar, R: Rng>(scene: &Scene<S>, dt: S, rng: &mut R) -> Scene<S> {
    assert!(dt > S::zero(), "dt must be positive");
    let anchor = scene.anchor();
    let mut out = scene.clone();
    for o in &mut out.obstacles {
        match &mut o.motion {
            MotionModel::Static => {}
            MotionModel::Linear { velocity, respawn_radius } => {
                o.position = o.position + velocity.scale(dt);
                let r = *respawn_radius;
                if (o.position - anchor).norm() > r {
                    let u = unit_sample::<S, _>(rng);
                    o.position = anchor + u.scale(r);
                    *velocity = -u.scale(velocity.norm());
                }
            }
            MotionModel::Approach { target, speed } => {
                let to_target = *target - o.position;
                let dist = to_target.norm();
                let step = *speed * dt;
                if dist <= step.max(S::c(0.05)) {
                    let (pos, tgt) = spawn_approach_ray(anchor, *speed, rng);
                    o.position = pos;
                    *target = tgt;
                } else {
                    o.position = o.position + to_target.scale(step / dist);
                }
            }
            MotionModel::WaypointLoop { points, speed, next } => {
                if points.is_empty() {
                    continue;
                }
                let goal = points[*next];
                let to_goal = goal - o.position;
                let dist = to_goal.norm();
                let step = *speed * dt;
                if dist <= step {
                    o.position = goal;
                    *next = (*next + 1) % points.len();
                } else {
                    o.position = o.position + to_goal.scale(step / dist);
                }
            }
        }
    }
    out
}

fn unit_sample<S: Scalar, R: Rng>(rng: &mut R) -> Vec3<S> {
    loop {
        let v = Vec3::<S>::splat64(
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        );
        let n = v.norm().f();
        if n > 1e-3 && n <= 1.0 {
            return v.scale(S::one() / v.norm());
        }
    }
}

/// Launch point 8-15 m out on a random ray through a jittered pass point near
/// the anchor, with the far target 12 m beyond so the obstacle flies through.
fn spawn_approach_ray<S: Scalar, R: Rng>(anchor: Vec3<S>, _speed: S, rng: &mut R) -> (Vec3<S>, Vec3<S>) {
    let u = unit_sample::<S, _>(rng);
    let range = S::c(rng.gen::<f64>() * 7.0 + 8.0);
    let pos = anchor + u.scale(range);
    let jitter = unit_sample::<S, _>(rng).scale(S::c(rng.gen::<f64>()));
    let pass = anchor + jitter;
    let through = (pass - pos).normalized();
    let target = pass + through.scale(S::c(12.0));
    (pos, target)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Hovering,
    Following,
    Filming,
}

/// Builds a randomized scene for one task episode.
pub fn spawn_task_scene<S: Scalar, R: Rng>(
    kind: TaskKind,
    density: usize,
    speed: S,
    size: S,
    rng: &mut R,
) -> Scene<S> {
    let bounds = Aabb {
        min: Vec3::splat64(-20.0, -20.0, 0.0),
        max: Vec3::splat64(20.0, 20.0, 8.0),
    };
    let mut scene = Scene::empty(bounds, Some(S::zero()));
    let anchor = scene.anchor();
    match kind {
        TaskKind::Hovering => {
            for _ in 0..density {
                let (position, target) = loop {
                    let (pos, tgt) = spawn_approach_ray(anchor, speed, rng);
                    if pos.z > size + S::c(0.2) {
                        break (pos, tgt);
                    }
                };
                scene.obstacles.push(Obstacle {
                    shape: Shape::Sphere { radius: size },
                    position,
                    motion: MotionModel::Approach { target, speed },
                });
            }
        }
        TaskKind::Following | TaskKind::Filming => {
            for i in 0..density {
                if i % 2 == 0 {
                    let half_height = S::c(rng.gen::<f64>() * 2.0 + 2.0);
                    let x = S::c(rng.gen::<f64>() * 30.0 - 15.0);
                    let y = S::c(rng.gen::<f64>() * 10.0 - 5.0);
                    scene.obstacles.push(Obstacle {
                        shape: Shape::VerticalCapsule { radius: size, half_height },
                        position: Vec3::new(x, y, half_height),
                        motion: MotionModel::Static,
                    });
                } else {
                    let u = unit_sample::<S, _>(rng);
                    let horizontal = Vec3::new(u.x, u.y, S::zero());
                    let dir = if horizontal.norm().f() < 1e-3 {
                        Vec3::new(S::one(), S::zero(), S::zero())
                    } else {
                        horizontal.normalized()
                    };
                    let position = Vec3::new(
                        S::c(rng.gen::<f64>() * 24.0 - 12.0),
                        S::c(rng.gen::<f64>() * 24.0 - 12.0),
                        S::c(rng.gen::<f64>() * 3.0 + 1.0),
                    );
                    scene.obstacles.push(Obstacle {
                        shape: Shape::Sphere { radius: size },
                        position,
                        motion: MotionModel::Linear { velocity: dir.scale(speed), respawn_radius: S::c(20.0) },
                    });
                }
            }
        }
    }
    scene
}
