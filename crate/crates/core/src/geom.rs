//! Scalar-generic geometry: vectors, rotations, transforms and axis-aligned boxes.
//!
//! Lengths are centimetres and angles are degrees throughout the crate.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use num_traits::{Float, FromPrimitive};
use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

/// Floating-point scalar usable by the geometry and metric kernels.
pub trait Scalar:
    Float + FromPrimitive + Debug + Default + Send + Sync + Serialize + for<'de> Deserialize<'de> + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn all_positive(&self) -> bool {
        self.x > T::zero() && self.y > T::zero() && self.z > T::zero()
    }

    pub fn mul_elem(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn max_component(&self) -> T {
        self.x.max(self.y).max(self.z)
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Scalar> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

// Vectors travel as `[x, y, z]` arrays in every file format.
impl<T: Scalar> Serialize for Vec3<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Vec3<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[T; 3]>::deserialize(d).map(Self::from_array)
    }
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn normalize_deg<T: Scalar>(deg: T) -> T {
    let full = T::lit(360.0);
    let half = T::lit(180.0);
    if deg >= -half && deg < half {
        return deg;
    }
    let shifted = deg + half;
    let mut r = shifted - (shifted / full).floor() * full;
    if r >= full {
        r = r - full;
    }
    if r < T::zero() {
        r = T::zero();
    }
    let out = r - half;
    if out >= half {
        -half
    } else {
        out
    }
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
pub fn sin_cos_deg<T: Scalar>(deg: T) -> (T, T) {
    let d = normalize_deg(deg);
    let quarter = T::lit(90.0);
    let q = d / quarter;
    if q == q.round() {
        let one = T::one();
        let zero = T::zero();
        return match q.to_i32().unwrap_or(0) {
            -2 => (zero, -one),
            -1 => (-one, zero),
            0 => (zero, one),
            1 => (one, zero),
            _ => (zero, -one),
        };
    }
    d.to_radians().sin_cos()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Rotation<T> {
    pub yaw: T,
    pub pitch: T,
    pub roll: T,
}

impl<T: Scalar> Rotation<T> {
    /// Builds a rotation with every component wrapped into `[-180, 180)`.
    pub fn new(yaw: T, pitch: T, roll: T) -> Self {
        Self {
            yaw: normalize_deg(yaw),
            pitch: normalize_deg(pitch),
            roll: normalize_deg(roll),
        }
    }

    pub fn from_yaw(yaw: T) -> Self {
        Self::new(yaw, T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.yaw.is_finite() && self.pitch.is_finite() && self.roll.is_finite()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.yaw, self.pitch, self.roll]
    }
}

impl<T: Scalar> Serialize for Rotation<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Rotation<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[T; 3]>::deserialize(d).map(|a| Self::new(a[0], a[1], a[2]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Transform<T: Scalar> {
    pub location: Vec3<T>,
    pub rotation: Rotation<T>,
    pub scale: Vec3<T>,
}

impl<T: Scalar> Default for Transform<T> {
    fn default() -> Self {
        Self::at(Vec3::zero())
    }
}

impl<T: Scalar> Transform<T> {
    pub fn at(location: Vec3<T>) -> Self {
        Self {
            location,
            rotation: Rotation::default(),
            scale: Vec3::splat(T::one()),
        }
    }

    pub fn with_yaw(mut self, yaw: T) -> Self {
        self.rotation = Rotation::from_yaw(yaw);
        self
    }

    pub fn with_scale(mut self, scale: Vec3<T>) -> Self {
        self.scale = scale;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.location.is_finite() && self.rotation.is_finite() && self.scale.is_finite()
    }

    /// World-space box of a local box with half-extents `base_extent` centred on the
    /// actor origin. Only yaw participates; pitch and roll are ignored.
    pub fn world_aabb(&self, base_extent: Vec3<T>) -> Aabb<T> {
        let e = base_extent.mul_elem(self.scale);
        let (s, c) = sin_cos_deg(self.rotation.yaw);
        let hx = c.abs() * e.x + s.abs() * e.y;
        let hy = s.abs() * e.x + c.abs() * e.y;
        let half = Vec3::new(hx, hy, e.z);
        Aabb {
            min: self.location - half,
            max: self.location + half,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Aabb<T: Scalar> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Scalar> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Option<Self> {
        (min.x <= max.x && min.y <= max.y && min.z <= max.z).then_some(Self { min, max })
    }

    pub fn from_center_half(center: Vec3<T>, half: Vec3<T>) -> Self {
        Self {
            min: center - half,
            max: center + half,
        }
    }

    pub fn center(&self) -> Vec3<T> {
        (self.min + self.max) * T::lit(0.5)
    }

    pub fn half_extents(&self) -> Vec3<T> {
        (self.max - self.min) * T::lit(0.5)
    }

    /// Overlap lengths along x, y and z; non-positive means separated or touching.
    pub fn overlap_lengths(&self, o: &Self) -> Vec3<T> {
        Vec3::new(
            self.max.x.min(o.max.x) - self.min.x.max(o.min.x),
            self.max.y.min(o.max.y) - self.min.y.max(o.min.y),
            self.max.z.min(o.max.z) - self.min.z.max(o.min.z),
        )
    }

    /// Strict 3D overlap; boxes sharing only a face do not intersect.
    pub fn intersects(&self, o: &Self) -> bool {
        let l = self.overlap_lengths(o);
        l.x > T::zero() && l.y > T::zero() && l.z > T::zero()
    }

    /// Area of the XY-plane intersection of the two footprints (0 when disjoint).
    pub fn xy_overlap_area(&self, o: &Self) -> T {
        let l = self.overlap_lengths(o);
        if l.x > T::zero() && l.y > T::zero() {
            l.x * l.y
        } else {
            T::zero()
        }
    }

    pub fn xy_contains_point(&self, x: T, y: T) -> bool {
        x >= self.min.x && x <= self.max.x && y >= self.min.y && y <= self.max.y
    }
}
