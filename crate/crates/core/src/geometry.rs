//! Oriented-box and projective geometry kernels.
//!
//! Conventions used throughout the crate:
//!
//! * boxes carry full extents (`size`), not half extents;
//! * a [`Pose`] maps points from its source frame into its target frame, so a
//!   `world_from_cam` pose takes camera-frame points to world coordinates;
//! * cameras look down `+z` with `+x` right and `+y` down (pixel `v` grows
//!   downwards);
//! * box corners are indexed by sign bits: bit 0 selects `+x`, bit 1 `+y`,
//!   bit 2 `+z` (a cleared bit means the negative half extent).

use nalgebra::{Isometry3, Matrix3, Point2, Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Rotation3 = UnitQuaternion<f64>;
/// Rigid transform. Named by direction, e.g. `world_from_cam`.
pub type Pose = Isometry3<f64>;
pub type Point2d = Point2<f64>;

/// Corners closer to the camera than this (meters) make a box not visible.
pub const Z_NEAR: f64 = 0.05;

/// Inline storage for the small polygons produced by projecting boxes.
pub(crate) type PolyBuf = SmallVec<[Point2d; 16]>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box size must be finite and positive, got ({0}, {1}, {2})")]
    InvalidSize(f64, f64, f64),
    #[error("box center must be finite")]
    NonFiniteCenter,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let all_finite = [self.fx, self.fy, self.cx, self.cy, self.width, self.height]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(GeometryError::InvalidIntrinsics("non-finite value".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width && self.cy > 0.0 && self.cy < self.height) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must lie strictly inside the image".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn project(&self, p_cam: &Vec3) -> Point2d {
        Point2d::new(self.fx * p_cam.x / p_cam.z + self.cx, self.fy * p_cam.y / p_cam.z + self.cy)
    }

    #[inline]
    pub fn in_image(&self, uv: &Point2d) -> bool {
        uv.x >= 0.0 && uv.x <= self.width && uv.y >= 0.0 && uv.y <= self.height
    }
}

impl Default for Intrinsics {
    /// 640x480 camera with a roughly 65 degree horizontal field of view.
    fn default() -> Self {
        Self { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640.0, height: 480.0 }
    }
}

/// Oriented 3D bounding box: center, full extents `(l, w, h)` and rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D {
    pub center: Vec3,
    pub size: Vec3,
    pub rotation: Rotation3,
}

impl OrientedBox3D {
    pub fn new(center: Vec3, size: Vec3, rotation: Rotation3) -> Result<Self, GeometryError> {
        let b = Self { center, size, rotation };
        b.validate()?;
        Ok(b)
    }

    pub fn axis_aligned(center: Vec3, size: Vec3) -> Self {
        Self { center, size, rotation: Rotation3::identity() }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteCenter);
        }
        if !self.size.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(GeometryError::InvalidSize(self.size.x, self.size.y, self.size.z));
        }
        Ok(())
    }

    #[inline]
    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    #[inline]
    pub fn half_size(&self) -> Vec3 {
        self.size * 0.5
    }

    #[inline]
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// The 8 corners, indexed by sign bits (bit 0: x, bit 1: y, bit 2: z).
    pub fn corners(&self) -> [Vec3; 8] {
        let r = self.rotation_matrix();
        let h = self.half_size();
        let ax = r.column(0) * h.x;
        let ay = r.column(1) * h.y;
        let az = r.column(2) * h.z;
        std::array::from_fn(|i| {
            let sx = if i & 1 != 0 { 1.0 } else { -1.0 };
            let sy = if i & 2 != 0 { 1.0 } else { -1.0 };
            let sz = if i & 4 != 0 { 1.0 } else { -1.0 };
            self.center + ax * sx + ay * sy + az * sz
        })
    }

    /// Expresses a point in the box's local frame (origin at the center).
    #[inline]
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse_transform_vector(&(p - self.center))
    }

    /// Boundary-inclusive point containment.
    pub fn contains_point(&self, p: &Vec3) -> bool {
        let q = self.to_local(p);
        let h = self.half_size();
        q.x.abs() <= h.x && q.y.abs() <= h.y && q.z.abs() <= h.z
    }
}

/// Free-function form of [`OrientedBox3D::corners`].
pub fn box_corners(b: &OrientedBox3D) -> [Vec3; 8] {
    b.corners()
}

/// Free-function form of [`OrientedBox3D::contains_point`].
pub fn contains_point(b: &OrientedBox3D, p: &Vec3) -> bool {
    b.contains_point(p)
}

/// Maps a box through a rigid transform. Size is untouched.
pub fn transform_box(pose: &Pose, b: &OrientedBox3D) -> OrientedBox3D {
    OrientedBox3D {
        center: pose.transform_point(&Point3::from(b.center)).coords,
        size: b.size,
        rotation: pose.rotation * b.rotation,
    }
}

/// Axis-aligned bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn volume(&self) -> f64 {
        let d = self.max - self.min;
        d.x.max(0.0) * d.y.max(0.0) * d.z.max(0.0)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn intersection_volume(&self, other: &Aabb) -> f64 {
        let lo = self.min.sup(&other.min);
        let hi = self.max.inf(&other.max);
        let d = hi - lo;
        d.x.max(0.0) * d.y.max(0.0) * d.z.max(0.0)
    }

    pub fn iou(&self, other: &Aabb) -> f64 {
        let inter = self.intersection_volume(other);
        let union = self.volume() + other.volume() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

pub fn aabb_of(b: &OrientedBox3D) -> Aabb {
    // |R| * half extents gives the projected half widths exactly.
    let r = b.rotation_matrix();
    let h = b.half_size();
    let half = r.abs() * h;
    Aabb { min: b.center - half, max: b.center + half }
}

/// Convex polygon in pixel coordinates, counter-clockwise in a `y`-up sense.
///
/// With image coordinates (`v` down) the same vertex order appears clockwise
/// on screen; every routine here only relies on a consistent positive signed
/// area, so the orientation label does not matter downstream.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon2D {
    pub vertices: Vec<Point2d>,
}

impl Polygon2D {
    pub fn new(vertices: Vec<Point2d>) -> Self {
        Self { vertices }
    }

    /// Fewer than three vertices or zero area.
    pub fn is_degenerate(&self) -> bool {
        self.vertices.len() < 3 || self.area() <= 0.0
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).max(0.0)
    }

    pub fn centroid(&self) -> Point2d {
        let a = signed_area(&self.vertices);
        if a.abs() < f64::MIN_POSITIVE || self.vertices.len() < 3 {
            let n = self.vertices.len().max(1) as f64;
            let s = self.vertices.iter().fold(nalgebra::Vector2::zeros(), |acc, p| acc + p.coords);
            return Point2d::from(s / n);
        }
        let n = self.vertices.len();
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let c = p.x * q.y - q.x * p.y;
            cx += (p.x + q.x) * c;
            cy += (p.y + q.y) * c;
        }
        Point2d::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    /// Boundary-inclusive containment for a convex CCW polygon.
    pub fn contains(&self, p: &Point2d) -> bool {
        convex_contains(&self.vertices, p)
    }
}

#[inline]
fn cross2(o: &Point2d, a: &Point2d, b: &Point2d) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

pub(crate) fn signed_area(v: &[Point2d]) -> f64 {
    let n = v.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let p = &v[i];
        let q = &v[(i + 1) % n];
        s += p.x * q.y - q.x * p.y;
    }
    0.5 * s
}

pub(crate) fn convex_contains(v: &[Point2d], p: &Point2d) -> bool {
    let n = v.len();
    if n < 3 {
        return false;
    }
    (0..n).all(|i| cross2(&v[i], &v[(i + 1) % n], p) >= 0.0)
}

/// Monotone-chain hull written into `out`. `pts` is reordered in place.
pub(crate) fn hull_into(pts: &mut [Point2d], out: &mut PolyBuf) {
    out.clear();
    let n = pts.len();
    if n == 0 {
        return;
    }
    pts.sort_unstable_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    if n < 3 {
        out.push(pts[0]);
        if n == 2 && pts[1] != pts[0] {
            out.push(pts[1]);
        }
        return;
    }
    // lower hull
    for p in pts.iter() {
        while out.len() >= 2 && cross2(&out[out.len() - 2], &out[out.len() - 1], p) <= 0.0 {
            out.pop();
        }
        out.push(*p);
    }
    // upper hull
    let lower_len = out.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while out.len() >= lower_len && cross2(&out[out.len() - 2], &out[out.len() - 1], p) <= 0.0 {
            out.pop();
        }
        out.push(*p);
    }
    out.pop();
    if out.len() == 2 && out[0] == out[1] {
        out.pop();
    }
}

/// Convex hull by Andrew's monotone chain. Collinear points are dropped.
///
/// Returns a degenerate polygon (fewer than 3 vertices) when all input points
/// are collinear or coincident.
pub fn convex_hull(points: &[Point2d]) -> Polygon2D {
    let mut pts: Vec<Point2d> = points.to_vec();
    let mut out = PolyBuf::new();
    hull_into(&mut pts, &mut out);
    Polygon2D::new(out.into_vec())
}

/// Sutherland-Hodgman clip of convex `subject` by convex CCW `clip`.
pub(crate) fn clip_convex(subject: &[Point2d], clip: &[Point2d], out: &mut PolyBuf) {
    out.clear();
    out.extend_from_slice(subject);
    let m = clip.len();
    let mut input = PolyBuf::new();
    for i in 0..m {
        if out.is_empty() {
            return;
        }
        let c1 = clip[i];
        let c2 = clip[(i + 1) % m];
        std::mem::swap(&mut input, out);
        out.clear();
        let n = input.len();
        for k in 0..n {
            let cur = input[k];
            let prev = input[(k + n - 1) % n];
            let dc = cross2(&c1, &c2, &cur);
            let dp = cross2(&c1, &c2, &prev);
            if dc >= 0.0 {
                if dp < 0.0 {
                    out.push(lerp_at(&prev, &cur, dp, dc));
                }
                out.push(cur);
            } else if dp >= 0.0 {
                out.push(lerp_at(&prev, &cur, dp, dc));
            }
        }
    }
}

#[inline]
fn lerp_at(a: &Point2d, b: &Point2d, da: f64, db: f64) -> Point2d {
    let t = da / (da - db);
    Point2d::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t)
}

/// IoU of two convex CCW vertex lists; degenerate input yields 0.
pub(crate) fn convex_iou(a: &[Point2d], b: &[Point2d]) -> f64 {
    let area_a = signed_area(a);
    let area_b = signed_area(b);
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let mut inter = PolyBuf::new();
    clip_convex(a, b, &mut inter);
    let ai = signed_area(&inter).max(0.0).min(area_a.min(area_b));
    let union = area_a + area_b - ai;
    if union <= 0.0 {
        0.0
    } else {
        (ai / union).clamp(0.0, 1.0)
    }
}

/// Intersection-over-union of two convex CCW polygons.
pub fn hull_iou_2d(a: &Polygon2D, b: &Polygon2D) -> f64 {
    convex_iou(&a.vertices, &b.vertices)
}

/// Projects a world-frame box into a camera.
///
/// Returns `None` (not visible) when any corner sits closer than [`Z_NEAR`]
/// in the camera frame. The hull is not clipped to the image bounds.
pub fn project_box_hull(k: &Intrinsics, cam_from_world: &Pose, box_world: &OrientedBox3D) -> Option<Polygon2D> {
    let cam_box = transform_box(cam_from_world, box_world);
    let mut pts = [Point2d::origin(); 8];
    for (dst, c) in pts.iter_mut().zip(cam_box.corners().iter()) {
        if !(c.z >= Z_NEAR) {
            return None;
        }
        *dst = k.project(c);
    }
    let mut out = PolyBuf::new();
    hull_into(&mut pts, &mut out);
    Some(Polygon2D::new(out.into_vec()))
}

/// Precomputed unit-cube samples in `[-0.5, 0.5)^3`, shared by both boxes of a
/// pair so the combined estimator is exactly symmetric.
#[derive(Debug, Clone)]
pub struct McSampler {
    unit: Vec<Vec3>,
}

impl McSampler {
    /// `seed` keys a ChaCha8 stream; stream 0 is reserved for IoU samples.
    pub fn new(n_samples: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let unit = (0..n_samples.max(1))
            .map(|_| Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        Self { unit }
    }

    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }

    /// Fraction of samples drawn inside `from` that fall inside `into`.
    fn fraction_inside(&self, from: &OrientedBox3D, into: &OrientedBox3D) -> f64 {
        let r_from = from.rotation_matrix();
        let r_into_t = into.rotation_matrix().transpose();
        let m = r_into_t * r_from * Matrix3::from_diagonal(&from.size);
        let d = r_into_t * (from.center - into.center);
        let h = into.half_size();
        let hits = self
            .unit
            .iter()
            .filter(|u| {
                let q = m * **u + d;
                q.x.abs() <= h.x && q.y.abs() <= h.y && q.z.abs() <= h.z
            })
            .count();
        hits as f64 / self.unit.len() as f64
    }

    pub fn iou(&self, a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
        if !aabb_of(a).overlaps(&aabb_of(b)) {
            return 0.0;
        }
        let (va, vb) = (a.volume(), b.volume());
        let fa = self.fraction_inside(a, b);
        let fb = self.fraction_inside(b, a);
        let inter = 0.5 * (fa * va + fb * vb);
        let union = va + vb - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

/// Monte-Carlo IoU: samples inside each box, counts hits in the other, and
/// averages the two intersection-volume estimates.
pub fn mc_iou_3d(a: &OrientedBox3D, b: &OrientedBox3D, n_samples: usize, seed: u64) -> f64 {
    McSampler::new(n_samples, seed).iou(a, b)
}

/// Face corner indices ordered counter-clockwise seen from outside.
pub(crate) const BOX_FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2], // -x
    [1, 3, 7, 5], // +x
    [0, 1, 5, 4], // -y
    [2, 6, 7, 3], // +y
    [0, 2, 3, 1], // -z
    [4, 5, 7, 6], // +z
];

/// A plane `n . x = offset`; the inside is `n . x <= offset`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HalfSpace {
    pub normal: Vec3,
    pub offset: f64,
}

impl HalfSpace {
    #[inline]
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Outward half-spaces of a box, in [`BOX_FACES`] order.
pub(crate) fn box_half_spaces(b: &OrientedBox3D) -> [HalfSpace; 6] {
    let r = b.rotation_matrix();
    let h = b.half_size();
    std::array::from_fn(|f| {
        let axis = f / 2;
        let sign = if f % 2 == 0 { -1.0 } else { 1.0 };
        let normal: Vec3 = r.column(axis) * sign;
        HalfSpace { normal, offset: normal.dot(&b.center) + h[axis] }
    })
}

pub(crate) type Poly3 = SmallVec<[Vec3; 12]>;

/// Clips a planar polygon against a half-space; points within `eps` of the
/// plane count as inside.
pub(crate) fn clip_polygon_3d(poly: &Poly3, hs: &HalfSpace, eps: f64) -> Poly3 {
    let mut out = Poly3::new();
    let n = poly.len();
    for k in 0..n {
        let cur = poly[k];
        let prev = poly[(k + n - 1) % n];
        let dc = hs.signed_distance(&cur);
        let dp = hs.signed_distance(&prev);
        let cur_in = dc <= eps;
        let prev_in = dp <= eps;
        if cur_in {
            if !prev_in {
                out.push(prev + (cur - prev) * (dp / (dp - dc)));
            }
            out.push(cur);
        } else if prev_in {
            out.push(prev + (cur - prev) * (dp / (dp - dc)));
        }
    }
    out
}

fn face_polygons(b: &OrientedBox3D) -> [Poly3; 6] {
    let c = b.corners();
    std::array::from_fn(|f| BOX_FACES[f].iter().map(|&i| c[i]).collect())
}

/// Signed volume contribution of a closed, outward-oriented face set.
fn closed_surface_volume<'a>(faces: impl Iterator<Item = &'a Poly3>, origin: &Vec3) -> f64 {
    let mut v = 0.0;
    for poly in faces {
        if poly.len() < 3 {
            continue;
        }
        let p0 = poly[0] - origin;
        for i in 1..poly.len() - 1 {
            let p1 = poly[i] - origin;
            let p2 = poly[i + 1] - origin;
            v += p0.dot(&p1.cross(&p2));
        }
    }
    v / 6.0
}

/// Exact intersection volume of two oriented boxes.
///
/// The boundary of `a ∩ b` is made of the faces of `a` clipped to `b` plus the
/// faces of `b` clipped to `a`; its volume follows from the divergence
/// theorem. A face of `b` lying on a same-facing face plane of `a` is skipped
/// since the clipped face of `a` already covers that patch.
pub fn intersection_volume(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    if !aabb_of(a).overlaps(&aabb_of(b)) {
        return 0.0;
    }
    let scale = 1.0 + a.center.abs().max().max(b.center.abs().max()) + a.size.max().max(b.size.max());
    let eps = 1e-12 * scale;
    let hs_a = box_half_spaces(a);
    let hs_b = box_half_spaces(b);

    let mut boundary: SmallVec<[Poly3; 12]> = SmallVec::new();
    for face in face_polygons(a).iter() {
        let mut poly = face.clone();
        for hs in hs_b.iter() {
            if poly.is_empty() {
                break;
            }
            poly = clip_polygon_3d(&poly, hs, eps);
        }
        boundary.push(poly);
    }
    for (f, face) in face_polygons(b).iter().enumerate() {
        let hb = &hs_b[f];
        let shared = hs_a
            .iter()
            .any(|ha| ha.normal.dot(&hb.normal) > 1.0 - 1e-12 && (ha.offset - hb.offset).abs() <= eps);
        if shared {
            continue;
        }
        let mut poly = face.clone();
        for hs in hs_a.iter() {
            if poly.is_empty() {
                break;
            }
            poly = clip_polygon_3d(&poly, hs, eps);
        }
        boundary.push(poly);
    }
    let v = closed_surface_volume(boundary.iter(), &a.center);
    v.clamp(0.0, a.volume().min(b.volume()))
}

/// Exact 3D IoU via polytope clipping.
pub fn exact_iou_3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let inter = intersection_volume(a, b);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Rotation taking the camera's `+z` (optical axis) to `forward`, with image
/// `+y` pointing as close to world `-up` as possible.
pub fn look_rotation(forward: &Vec3, up: &Vec3) -> Rotation3 {
    let f = forward.normalize();
    let mut right = f.cross(up);
    if right.norm() < 1e-9 {
        right = f.cross(&Vec3::x());
    }
    let right = right.normalize();
    let down = f.cross(&right);
    let m = Matrix3::from_columns(&[right, down, f]);
    Rotation3::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m))
}

/// Angle between the optical axes of two camera poses.
pub fn viewing_angle(a: &Rotation3, b: &Rotation3) -> f64 {
    let da = a * Vec3::z();
    let db = b * Vec3::z();
    da.cross(&db).norm().atan2(da.dot(&db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn unit_cube() -> OrientedBox3D {
        OrientedBox3D::axis_aligned(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0))
    }

    fn rot_z(angle: f64) -> Rotation3 {
        Rotation3::from_axis_angle(&Vec3::z_axis(), angle)
    }

    fn sorted(mut v: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    fn rounded(c: &[Vec3; 8]) -> Vec<[f64; 3]> {
        c.iter()
            .map(|p| [(p.x * 1e9).round() / 1e9, (p.y * 1e9).round() / 1e9, (p.z * 1e9).round() / 1e9])
            .collect()
    }

    #[test]
    fn unit_cube_corners() {
        let c = unit_cube().corners();
        for (i, p) in c.iter().enumerate() {
            let expect = Vec3::new(
                if i & 1 != 0 { 0.5 } else { -0.5 },
                if i & 2 != 0 { 0.5 } else { -0.5 },
                if i & 4 != 0 { 0.5 } else { -0.5 },
            );
            assert_eq!(*p, expect);
        }
    }

    #[test]
    fn rotated_cube_has_same_corner_set() {
        let mut b = unit_cube();
        b.rotation = rot_z(FRAC_PI_2);
        assert_eq!(sorted(rounded(&b.corners())), sorted(rounded(&unit_cube().corners())));
    }

    #[test]
    fn translated_box_corners() {
        let b = OrientedBox3D::axis_aligned(Vec3::new(1.0, 2.0, 3.0), Vec3::new(2.0, 2.0, 2.0));
        for (i, p) in b.corners().iter().enumerate() {
            assert_eq!(p.x, if i & 1 != 0 { 2.0 } else { 0.0 });
            assert_eq!(p.y, if i & 2 != 0 { 3.0 } else { 1.0 });
            assert_eq!(p.z, if i & 4 != 0 { 4.0 } else { 2.0 });
        }
    }

    #[test]
    fn face_table_is_outward() {
        let b = unit_cube();
        let c = b.corners();
        let hs = box_half_spaces(&b);
        for (f, face) in BOX_FACES.iter().enumerate() {
            let n = (c[face[1]] - c[face[0]]).cross(&(c[face[2]] - c[face[0]]));
            assert!(n.normalize().dot(&hs[f].normal) > 0.999, "face {f}");
        }
    }

    #[test]
    fn transform_identity_and_translation() {
        let b = OrientedBox3D::new(Vec3::new(0.3, -1.0, 2.0), Vec3::new(1.0, 2.0, 0.5), rot_z(0.4)).unwrap();
        assert_eq!(transform_box(&Pose::identity(), &b), b);
        let t = Pose::translation(0.0, 0.0, 5.0);
        let moved = transform_box(&t, &b);
        assert_eq!(moved.center, b.center + Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(moved.size, b.size);
        assert_eq!(moved.rotation, b.rotation);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(OrientedBox3D::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0), Rotation3::identity()).is_err());
        assert!(OrientedBox3D::new(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::repeat(1.0), Rotation3::identity()).is_err());
        assert!(Intrinsics::new(100.0, 100.0, 0.0, 50.0, 100.0, 100.0).is_err());
        assert!(Intrinsics::new(-1.0, 100.0, 50.0, 50.0, 100.0, 100.0).is_err());
    }

    #[test]
    fn projection_centroid_on_principal_point() {
        let k = Intrinsics::new(100.0, 100.0, 100.0, 100.0, 200.0, 200.0).unwrap();
        let b = OrientedBox3D::axis_aligned(Vec3::new(0.0, 0.0, 2.0), Vec3::repeat(1.0));
        let hull = project_box_hull(&k, &Pose::identity(), &b).unwrap();
        let c = hull.centroid();
        assert!(close(c.x, 100.0, 1e-9) && close(c.y, 100.0, 1e-9));
    }

    #[test]
    fn box_straddling_camera_plane_not_visible() {
        let k = Intrinsics::default();
        let b = OrientedBox3D::axis_aligned(Vec3::new(0.0, 0.0, 0.0), Vec3::repeat(1.0));
        assert!(project_box_hull(&k, &Pose::identity(), &b).is_none());
    }

    #[test]
    fn projected_cube_matches_scalar_reference() {
        // Scalar reference: the near face sits at z = 1.5 and bounds the hull,
        // u = 100 * (+-0.5) / 1.5 + 100.
        let k = Intrinsics::new(100.0, 100.0, 100.0, 100.0, 200.0, 200.0).unwrap();
        let b = OrientedBox3D::axis_aligned(Vec3::new(0.0, 0.0, 2.0), Vec3::repeat(1.0));
        let hull = project_box_hull(&k, &Pose::identity(), &b).unwrap();
        let lo = 100.0 - 50.0 / 1.5;
        let hi = 100.0 + 50.0 / 1.5;
        let expected = [(lo, lo), (hi, lo), (hi, hi), (lo, hi)];
        assert_eq!(hull.vertices.len(), 4);
        for (u, v) in expected {
            assert!(hull.vertices.iter().any(|p| close(p.x, u, 1e-9) && close(p.y, v, 1e-9)), "{u},{v}");
        }
        assert!(close(hull.area(), (100.0 / 1.5f64).powi(2), 1e-6));
    }

    #[test]
    fn hull_of_square_with_center() {
        let pts = [
            Point2d::new(0.0, 0.0),
            Point2d::new(1.0, 0.0),
            Point2d::new(1.0, 1.0),
            Point2d::new(0.0, 1.0),
            Point2d::new(0.5, 0.5),
        ];
        let h = convex_hull(&pts);
        assert_eq!(h.vertices.len(), 4);
        assert!(close(h.area(), 1.0, 1e-12));
        assert!(signed_area(&h.vertices) > 0.0);
    }

    #[test]
    fn hull_of_triangle_is_ccw() {
        let pts = [Point2d::new(0.0, 0.0), Point2d::new(0.0, 1.0), Point2d::new(1.0, 0.0)];
        let h = convex_hull(&pts);
        assert_eq!(h.vertices.len(), 3);
        assert!(signed_area(&h.vertices) > 0.0);
    }

    #[test]
    fn collinear_hull_is_degenerate() {
        let pts: Vec<_> = (0..5).map(|i| Point2d::new(i as f64, 2.0 * i as f64)).collect();
        let h = convex_hull(&pts);
        assert!(h.is_degenerate());
        assert_eq!(convex_hull(&[Point2d::new(1.0, 1.0)]).vertices.len(), 1);
    }

    /// O(n^3) reference: (i, j) is a hull edge iff every other point lies
    /// strictly to its left.
    fn brute_force_hull_vertices(pts: &[Point2d]) -> Vec<usize> {
        let mut verts = Vec::new();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                if i == j {
                    continue;
                }
                let edge = (0..pts.len())
                    .filter(|&k| k != i && k != j)
                    .all(|k| cross2(&pts[i], &pts[j], &pts[k]) > 0.0);
                if edge {
                    verts.push(i);
                    verts.push(j);
                }
            }
        }
        verts.sort_unstable();
        verts.dedup();
        verts
    }

    #[test]
    fn hull_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let pts: Vec<Point2d> = (0..8).map(|_| Point2d::new(rng.gen(), rng.gen())).collect();
            let expect = brute_force_hull_vertices(&pts);
            let hull = convex_hull(&pts);
            let mut got: Vec<usize> = hull
                .vertices
                .iter()
                .map(|v| pts.iter().position(|p| p == v).unwrap())
                .collect();
            got.sort_unstable();
            assert_eq!(got, expect);
        }
    }

    fn square(x0: f64, y0: f64, side: f64) -> Polygon2D {
        Polygon2D::new(vec![
            Point2d::new(x0, y0),
            Point2d::new(x0 + side, y0),
            Point2d::new(x0 + side, y0 + side),
            Point2d::new(x0, y0 + side),
        ])
    }

    #[test]
    fn hull_iou_basic_cases() {
        let a = square(0.0, 0.0, 1.0);
        assert!(close(hull_iou_2d(&a, &a), 1.0, 1e-12));
        assert_eq!(hull_iou_2d(&a, &square(5.0, 5.0, 1.0)), 0.0);
        assert_eq!(hull_iou_2d(&a, &Polygon2D::default()), 0.0);
    }

    #[test]
    fn hull_iou_half_offset_matches_raster() {
        let a = square(0.0, 0.0, 1.0);
        let b = square(0.5, 0.0, 1.0);
        // 1000^2 raster over [0, 1.5] x [0, 1]
        let n = 1000;
        let (mut inter, mut uni) = (0u64, 0u64);
        for i in 0..n {
            for j in 0..n {
                let p = Point2d::new((i as f64 + 0.5) * 1.5 / n as f64, (j as f64 + 0.5) / n as f64);
                let (ia, ib) = (a.contains(&p), b.contains(&p));
                inter += (ia && ib) as u64;
                uni += (ia || ib) as u64;
            }
        }
        let raster = inter as f64 / uni as f64;
        assert!(close(raster, 1.0 / 3.0, 5e-3));
        assert!(close(hull_iou_2d(&a, &b), raster, 5e-3));
        assert!(close(hull_iou_2d(&a, &b), 1.0 / 3.0, 1e-12));
    }

    #[test]
    fn containment_boundary() {
        let b = OrientedBox3D::new(Vec3::new(1.0, 1.0, 1.0), Vec3::new(2.0, 1.0, 0.5), rot_z(0.3)).unwrap();
        assert!(b.contains_point(&b.center));
        for c in b.corners() {
            // corners come from the forward transform; allow for rounding
            let pulled = b.center + (c - b.center) * (1.0 - 1e-12);
            assert!(b.contains_point(&pulled));
        }
        assert!(unit_cube().contains_point(&Vec3::new(0.5, 0.5, 0.5)));
        let r = b.rotation_matrix();
        for axis in 0..3 {
            let p = b.center + r.column(axis) * (b.half_size()[axis] * 1.001);
            assert!(!b.contains_point(&p));
        }
    }

    #[test]
    fn mc_iou_trivial_cases() {
        let a = OrientedBox3D::new(Vec3::new(0.2, 0.1, 1.0), Vec3::new(1.0, 2.0, 0.7), rot_z(0.7)).unwrap();
        assert_eq!(mc_iou_3d(&a, &a, 512, 3), 1.0);
        let far = OrientedBox3D::axis_aligned(Vec3::new(10.0, 0.0, 0.0), Vec3::repeat(1.0));
        assert_eq!(mc_iou_3d(&a, &far, 512, 3), 0.0);
    }

    #[test]
    fn mc_iou_offset_cubes() {
        let a = unit_cube();
        let b = OrientedBox3D::axis_aligned(Vec3::new(0.5, 0.0, 0.0), Vec3::repeat(1.0));
        let analytic = aabb_of(&a).iou(&aabb_of(&b));
        assert!(close(analytic, 1.0 / 3.0, 1e-15));
        let est = mc_iou_3d(&a, &b, 4096, 11);
        assert!(close(est, analytic, 0.03), "{est}");
    }

    #[test]
    fn exact_iou_cases() {
        let a = unit_cube();
        assert!(close(exact_iou_3d(&a, &a), 1.0, 1e-12));
        let b = OrientedBox3D::axis_aligned(Vec3::new(0.5, 0.0, 0.0), Vec3::repeat(1.0));
        assert!(close(exact_iou_3d(&a, &b), 1.0 / 3.0, 1e-12));
        let touching = OrientedBox3D::axis_aligned(Vec3::new(1.0, 0.0, 0.0), Vec3::repeat(1.0));
        assert!(exact_iou_3d(&a, &touching) < 1e-12);
        let inner = OrientedBox3D::axis_aligned(Vec3::new(0.1, 0.0, 0.0), Vec3::repeat(0.5));
        assert!(close(exact_iou_3d(&a, &inner), 0.125, 1e-12));
    }

    #[test]
    fn exact_iou_rotated_cube_closed_form() {
        // Cube vs. itself rotated 45 degrees about z: the intersection is a
        // regular octagon prism of area 2(sqrt2 - 1) for a unit square.
        let a = unit_cube();
        let mut b = a;
        b.rotation = rot_z(std::f64::consts::FRAC_PI_4);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expect = inter / (2.0 - inter);
        assert!(close(exact_iou_3d(&a, &b), expect, 1e-12));
    }

    #[test]
    fn aabb_cases() {
        let a = OrientedBox3D::axis_aligned(Vec3::new(1.0, 2.0, 3.0), Vec3::new(1.0, 2.0, 3.0));
        let bb = aabb_of(&a);
        assert_eq!(bb.min, Vec3::new(0.5, 1.0, 1.5));
        assert_eq!(bb.max, Vec3::new(1.5, 3.0, 4.5));
        let mut r = OrientedBox3D::axis_aligned(Vec3::zeros(), Vec3::new(1.0, 1.0, 0.01));
        r.rotation = rot_z(std::f64::consts::FRAC_PI_4);
        let e = aabb_of(&r).extent();
        assert!(close(e.x, 2f64.sqrt(), 1e-12) && close(e.y, 2f64.sqrt(), 1e-12));
    }

    #[test]
    fn viewing_angle_of_identical_and_opposite() {
        let a = Rotation3::identity();
        assert_eq!(viewing_angle(&a, &a), 0.0);
        let b = Rotation3::from_axis_angle(&Vec3::y_axis(), std::f64::consts::PI);
        assert!(close(viewing_angle(&a, &b), std::f64::consts::PI, 1e-12));
    }

    #[test]
    fn look_rotation_is_rigid_and_points_forward() {
        let f = Vec3::new(1.0, 2.0, -0.5);
        let r = look_rotation(&f, &Vec3::z());
        let z = r * Vec3::z();
        assert!((z - f.normalize()).norm() < 1e-12);
        let down = r * Vec3::y();
        assert!(down.z < 0.0);
        assert!(close(r.to_rotation_matrix().matrix().determinant(), 1.0, 1e-12));
    }

    #[test]
    fn look_rotation_all_headings() {
        for i in 0..72 {
            let a = i as f64 * 5f64.to_radians();
            let f = Vec3::new(a.cos(), a.sin(), -0.4);
            let r = look_rotation(&f, &Vec3::z());
            assert!((r * Vec3::z() - f.normalize()).norm() < 1e-9, "heading {i}");
            assert!((r * Vec3::x()).z.abs() < 1e-9);
        }
    }

    fn arb_box() -> impl Strategy<Value = OrientedBox3D> {
        (
            prop::array::uniform3(-2.0f64..2.0),
            prop::array::uniform3(0.1f64..2.0),
            prop::array::uniform3(-3.2f64..3.2),
        )
            .prop_map(|(c, s, r)| OrientedBox3D {
                center: Vec3::from(c),
                size: Vec3::from(s),
                rotation: Rotation3::from_euler_angles(r[0], r[1], r[2]),
            })
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (prop::array::uniform3(-5.0f64..5.0), prop::array::uniform3(-3.2f64..3.2)).prop_map(|(t, r)| {
            Pose::from_parts(Vec3::from(t).into(), Rotation3::from_euler_angles(r[0], r[1], r[2]))
        })
    }

    proptest! {
        #[test]
        fn transform_round_trip_and_composition(b in arb_box(), p1 in arb_pose(), p2 in arb_pose()) {
            let back = transform_box(&p1.inverse(), &transform_box(&p1, &b));
            prop_assert!((back.center - b.center).norm() < 1e-9);
            prop_assert!(back.rotation.angle_to(&b.rotation) < 1e-9);
            prop_assert_eq!(back.size, b.size);
            let composed = transform_box(&(p1 * p2), &b);
            let chained = transform_box(&p1, &transform_box(&p2, &b));
            prop_assert!((composed.center - chained.center).norm() < 1e-9);
            prop_assert!(composed.rotation.angle_to(&chained.rotation) < 1e-9);
            prop_assert_eq!(composed.volume(), b.volume());
        }

        #[test]
        fn exact_iou_rigid_invariance(a in arb_box(), b in arb_box(), p in arb_pose()) {
            let before = exact_iou_3d(&a, &b);
            let after = exact_iou_3d(&transform_box(&p, &a), &transform_box(&p, &b));
            prop_assert!((before - after).abs() < 1e-6, "{} vs {}", before, after);
            prop_assert!((exact_iou_3d(&b, &a) - before).abs() < 1e-9);
        }

        #[test]
        fn mc_iou_symmetric(a in arb_box(), b in arb_box(), seed in 0u64..1000) {
            let s = McSampler::new(256, seed);
            prop_assert_eq!(s.iou(&a, &b), s.iou(&b, &a));
            let v = s.iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn outside_aabb_implies_outside_box(b in arb_box(), p in prop::array::uniform3(-4.0f64..4.0)) {
            let p = Vec3::from(p);
            let bb = aabb_of(&b);
            if !bb.contains(&p) {
                prop_assert!(!b.contains_point(&p));
            }
            for c in b.corners() {
                prop_assert!(c.iter().zip(bb.min.iter()).all(|(x, lo)| *x >= lo - 1e-12));
                prop_assert!(c.iter().zip(bb.max.iter()).all(|(x, hi)| *x <= hi + 1e-12));
            }
        }

        #[test]
        fn hull_iou_symmetric_and_bounded(
            a in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 3..10),
            b in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 3..10),
        ) {
            let ha = convex_hull(&a.iter().map(|(x, y)| Point2d::new(*x, *y)).collect::<Vec<_>>());
            let hb = convex_hull(&b.iter().map(|(x, y)| Point2d::new(*x, *y)).collect::<Vec<_>>());
            let ab = hull_iou_2d(&ha, &hb);
            let ba = hull_iou_2d(&hb, &ha);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-9);
            if !ha.is_degenerate() {
                prop_assert!((hull_iou_2d(&ha, &ha) - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn projected_hull_contains_interior_points(
            c in prop::array::uniform3(-0.5f64..0.5),
            s in prop::array::uniform3(0.1f64..1.0),
            r in prop::array::uniform3(-3.2f64..3.2),
            u in prop::collection::vec(prop::array::uniform3(-0.5f64..0.5), 20),
        ) {
            let k = Intrinsics::default();
            let b = OrientedBox3D {
                center: Vec3::new(c[0], c[1], 3.0 + c[2]),
                size: Vec3::from(s),
                rotation: Rotation3::from_euler_angles(r[0], r[1], r[2]),
            };
            let hull = project_box_hull(&k, &Pose::identity(), &b).unwrap();
            let rm = b.rotation_matrix();
            for q in u {
                let p = b.center + rm * Vec3::from(q).component_mul(&b.size);
                let uv = k.project(&p);
                let n = hull.vertices.len();
                let worst = (0..n)
                    .map(|i| {
                        let e = hull.vertices[(i + 1) % n] - hull.vertices[i];
                        e.perp(&(uv - hull.vertices[i])) / e.norm()
                    })
                    .fold(f64::INFINITY, f64::min);
                prop_assert!(worst >= -1e-6);
            }
        }
    }
}
