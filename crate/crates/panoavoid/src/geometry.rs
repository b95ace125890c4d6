//! Shared frame conventions: body frame is x-forward, y-left, z-up, and the
//! forward axis lands on the center column of an equirectangular image.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Copy, Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Vec3<S> {
    pub fn new(x: S, y: S, z: S) -> Self {
        Vec3 { x, y, z }
    }

    pub fn zero() -> Self {
        Vec3::new(S::zero(), S::zero(), S::zero())
    }

    pub fn splat64(x: f64, y: f64, z: f64) -> Self {
        Vec3::new(S::c(x), S::c(y), S::c(z))
    }

    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> S {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        assert!(n > S::zero(), "cannot normalize a zero vector");
        self.scale(S::one() / n)
    }

    pub fn scale(self, k: S) -> Self {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn to_array(self) -> [S; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [S; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl<S: Scalar> std::ops::Add for Vec3<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<S: Scalar> std::ops::Sub for Vec3<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<S: Scalar> std::ops::Neg for Vec3<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Hamilton quaternion, scalar first.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion<S> {
    pub w: S,
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Quaternion<S> {
    pub fn new(w: S, x: S, y: S, z: S) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn identity() -> Self {
        Quaternion::new(S::one(), S::zero(), S::zero(), S::zero())
    }

    pub fn norm(self) -> S {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        assert!(n > S::zero(), "cannot normalize a zero quaternion");
        let k = S::one() / n;
        Quaternion::new(self.w * k, self.x * k, self.y * k, self.z * k)
    }

    pub fn conj(self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn mul(self, o: Self) -> Self {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Rotates v by this quaternion (q v q*).
    pub fn rotate(self, v: Vec3<S>) -> Vec3<S> {
        let u = Vec3::new(self.x, self.y, self.z);
        let t = u.cross(v).scale(S::c(2.0));
        v + t.scale(self.w) + u.cross(t)
    }

    /// Inverse rotation for a unit quaternion.
    pub fn rotate_inv(self, v: Vec3<S>) -> Vec3<S> {
        self.conj().rotate(v)
    }
}

pub fn yaw_quaternion<S: Scalar>(psi: S) -> Quaternion<S> {
    let half = psi * S::c(0.5);
    Quaternion::new(half.cos(), S::zero(), S::zero(), half.sin())
}

pub fn up_vector<S: Scalar>(q: Quaternion<S>) -> Vec3<S> {
    q.rotate(Vec3::new(S::zero(), S::zero(), S::one()))
}

/// Equirectangular pixel grid over the full sphere.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquirectGrid {
    pub height: usize,
    pub width: usize,
}

impl EquirectGrid {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 2, "equirect height must be >= 2, got {height}");
        assert!(width >= 4, "equirect width must be >= 4, got {width}");
        assert!(width % 2 == 0, "equirect width must be even, got {width}");
        EquirectGrid { height, width }
    }

    /// Longitude/latitude of a continuous pixel coordinate. Pixel centers sit
    /// at integer (row, col); row -0.5 is the north pole boundary.
    pub fn lonlat_of_pixel(&self, row: f64, col: f64) -> (f64, f64) {
        let lon = 2.0 * std::f64::consts::PI * (col + 0.5) / self.width as f64 - std::f64::consts::PI;
        let lat = std::f64::consts::FRAC_PI_2 - std::f64::consts::PI * (row + 0.5) / self.height as f64;
        (lon, lat)
    }

    pub fn pixel_to_direction<S: Scalar>(&self, row: usize, col: usize) -> Vec3<S> {
        assert!(row < self.height, "row {row} out of range for height {}", self.height);
        assert!(col < self.width, "col {col} out of range for width {}", self.width);
        let (lon, lat) = self.lonlat_of_pixel(row as f64, col as f64);
        direction_from_lonlat(lon, lat)
    }

    /// Continuous inverse of the pixel-center direction map.
    pub fn direction_to_pixel<S: Scalar>(&self, d: Vec3<S>) -> (f64, f64) {
        let n = d.norm().f();
        assert!(n > 0.0, "cannot project a zero direction");
        let lon = d.y.f().atan2(d.x.f());
        let lat = (d.z.f() / n).clamp(-1.0, 1.0).asin();
        let col = (lon + std::f64::consts::PI) * self.width as f64 / (2.0 * std::f64::consts::PI) - 0.5;
        let row = (std::f64::consts::FRAC_PI_2 - lat) * self.height as f64 / std::f64::consts::PI - 0.5;
        (row, col)
    }
}

pub fn direction_from_lonlat<S: Scalar>(lon: f64, lat: f64) -> Vec3<S> {
    Vec3::splat64(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn pixel_direction_on_2x4_grid() {
        let g = EquirectGrid::new(2, 4);
        let d: Vec3<f64> = g.pixel_to_direction(0, 2);
        assert!(close(d.x, 0.5, 1e-12));
        assert!(close(d.y, 0.5, 1e-12));
        assert!(close(d.z, std::f64::consts::FRAC_1_SQRT_2, 1e-12));
    }

    #[test]
    fn pixel_directions_are_unit_and_round_trip() {
        let g = EquirectGrid::new(8, 16);
        for row in 0..8 {
            for col in 0..16 {
                let d: Vec3<f64> = g.pixel_to_direction(row, col);
                assert!(close(d.norm(), 1.0, 1e-6));
                let (r, c) = g.direction_to_pixel(d);
                assert!(close(r, row as f64, 0.5), "row {row} -> {r}");
                assert!(close(c, col as f64, 0.5), "col {col} -> {c}");
            }
        }
    }

    #[test]
    fn forward_axis_maps_to_image_center() {
        let g = EquirectGrid::new(64, 128);
        let (r, c) = g.direction_to_pixel(Vec3::<f64>::new(1.0, 0.0, 0.0));
        assert!(close(r, 31.5, 1e-9));
        assert!(close(c, 63.5, 1e-9));
        let (r, _) = g.direction_to_pixel(Vec3::<f64>::new(0.0, 0.0, 1.0));
        assert!(close(r, -0.5, 1e-9));
    }

    #[test]
    fn random_directions_round_trip_within_angular_tolerance() {
        let g = EquirectGrid::new(64, 128);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let v = Vec3::<f64>::new(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            );
            if v.norm() < 1e-3 {
                continue;
            }
            let d = v.normalized();
            let (row, col) = g.direction_to_pixel(d);
            let (lon, lat) = g.lonlat_of_pixel(row, col);
            let d2: Vec3<f64> = direction_from_lonlat(lon, lat);
            let angle = d.dot(d2).clamp(-1.0, 1.0).acos();
            assert!(angle < 1e-6, "angular error {angle}");
        }
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn pixel_to_direction_rejects_out_of_range() {
        let g = EquirectGrid::new(2, 4);
        let _: Vec3<f64> = g.pixel_to_direction(2, 0);
    }

    #[test]
    #[should_panic(expected = "even")]
    fn grid_rejects_odd_width() {
        EquirectGrid::new(4, 5);
    }

    #[test]
    fn yaw_rotations_match_axis_conventions() {
        let fwd = Vec3::<f64>::new(1.0, 0.0, 0.0);
        let r0 = yaw_quaternion(0.0).rotate(fwd);
        assert!(close(r0.x, 1.0, 1e-12) && close(r0.y, 0.0, 1e-12) && close(r0.z, 0.0, 1e-12));
        let r90 = yaw_quaternion(std::f64::consts::FRAC_PI_2).rotate(fwd);
        assert!(close(r90.x, 0.0, 1e-12) && close(r90.y, 1.0, 1e-12) && close(r90.z, 0.0, 1e-12));
        let up = up_vector(Quaternion::<f64>::identity());
        assert!(close(up.z, 1.0, 1e-12));
    }

    #[test]
    fn rotation_preserves_norm_and_yaw_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..50 {
            let q = Quaternion::<f64>::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            )
            .normalized();
            let v = Vec3::<f64>::new(rng.gen::<f64>() * 4.0 - 2.0, rng.gen(), rng.gen());
            assert!(close(q.rotate(v).norm(), v.norm(), 1e-6));

            let a = rng.gen::<f64>() * 6.0 - 3.0;
            let b = rng.gen::<f64>() * 6.0 - 3.0;
            let lhs = yaw_quaternion(a).mul(yaw_quaternion(b)).rotate(v);
            let rhs = yaw_quaternion(a + b).rotate(v);
            assert!(close(lhs.x, rhs.x, 1e-9) && close(lhs.y, rhs.y, 1e-9) && close(lhs.z, rhs.z, 1e-9));
        }
    }

    #[test]
    fn rotate_inv_undoes_rotate() {
        let q = yaw_quaternion(1.234f64);
        let v = Vec3::new(0.3, -1.2, 2.0);
        let back = q.rotate_inv(q.rotate(v));
        assert!(close(back.x, v.x, 1e-12) && close(back.y, v.y, 1e-12) && close(back.z, v.z, 1e-12));
    }
}
