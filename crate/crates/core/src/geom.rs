//! Fixed-point workcell coordinates.
//!
//! Positions are integer micrometres so that sums of displacements are exact
//! and every run is bit-reproducible.

use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub};

use serde::{Deserialize, Serialize};

pub const UM_PER_MM: i64 = 1000;

pub fn mm_to_um(mm: f64) -> i64 {
    (mm * UM_PER_MM as f64).round() as i64
}

pub fn um_to_mm(um: i64) -> f64 {
    um as f64 / UM_PER_MM as f64
}

/// A position or displacement, in micrometres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0, y: 0, z: 0 };

    pub const fn new(x: i64, y: i64, z: i64) -> Self {
        Self { x, y, z }
    }

    pub fn from_mm(x: f64, y: f64, z: f64) -> Self {
        Self::new(mm_to_um(x), mm_to_um(y), mm_to_um(z))
    }

    pub fn from_axis(axis: [i64; 3], um: i64) -> Self {
        Self::new(axis[0] * um, axis[1] * um, axis[2] * um)
    }

    pub fn to_mm(self) -> [f64; 3] {
        [um_to_mm(self.x), um_to_mm(self.y), um_to_mm(self.z)]
    }

    pub fn axes(self) -> [i64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_axes(a: [i64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn norm(self) -> f64 {
        let [x, y, z] = self.axes().map(|v| v as f64);
        (x * x + y * y + z * z).sqrt()
    }

    pub fn xy_distance(self, other: Point) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        (dx * dx + dy * dy).sqrt()
    }

    /// Rotates about the z axis by `deg`, rounding to whole micrometres.
    pub fn rotated_z(self, deg: f64) -> Point {
        let (s, c) = deg.to_radians().sin_cos();
        let (x, y) = (self.x as f64, self.y as f64);
        Point::new((c * x - s * y).round() as i64, (s * x + c * y).round() as i64, self.z)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point {
    fn add_assign(&mut self, o: Point) {
        *self = *self + o;
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [x, y, z] = self.to_mm();
        write!(f, "({x:.3}, {y:.3}, {z:.3})")
    }
}

/// End-effector pose: position in mm, tool rotation in degrees, gripper
/// aperture as a fraction (1 = open).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rotation: f64,
    pub gripper: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, rotation: f64, gripper: f64) -> Self {
        Self { x, y, z, rotation: normalize_deg(rotation), gripper: gripper.clamp(0.0, 1.0) }
    }

    pub fn point(&self) -> Point {
        Point::from_mm(self.x, self.y, self.z)
    }

    /// Rounds to the 0.1 mm / 0.1 deg resolution used on disk.
    pub fn quantized(&self) -> Pose {
        let tenth = |v: f64| (v * 10.0).round() / 10.0;
        Pose {
            x: tenth(self.x),
            y: tenth(self.y),
            z: tenth(self.z),
            rotation: normalize_deg(tenth(self.rotation)),
            gripper: tenth(self.gripper.clamp(0.0, 1.0)),
        }
    }
}

/// Normalizes an angle in degrees to `[0, 360)`.
pub fn normalize_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs.
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}
