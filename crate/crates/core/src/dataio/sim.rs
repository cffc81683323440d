//! Synthetic desk-scale scenes, camera paths and noisy single-view proposals.
//!
//! Proposal noise is shaped to look right in the image and wrong in depth:
//! the center shift along the viewing ray is three times the transverse
//! shift, and extents get log-normal scale errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    clip_polygon_3d, exact_iou_3d, look_rotation, transform_box, HalfSpace, Intrinsics, OrientedBox3D, Poly3, Pose,
    Rotation3, Vec3, BOX_FACES,
};
use crate::semantics::Feature;
use crate::stream::{FrameInput, ProposalInput};

/// Proposals are only emitted for objects whose center depth lies in this range.
pub const MIN_DEPTH: f64 = 0.3;
pub const MAX_DEPTH: f64 = 6.0;

/// Near plane used when truncating boxes to the view frustum.
pub const TRUNCATION_NEAR: f64 = 0.1;

const PLACEMENT_TRIES: usize = 10_000;
const FURNITURE_GAP: f64 = 0.1;
const SMALL_GAP: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("n_objects must be at least 1")]
    NoObjects,
    #[error("could not place object {index} without overlap after {tries} tries")]
    Placement { index: usize, tries: usize },
    #[error("n_frames must be at least 1")]
    NoFrames,
    #[error("invalid room extents ({0}, {1}, {2})")]
    InvalidRoom(f64, f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Furniture,
    Small,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub id: u64,
    pub bbox: OrientedBox3D,
    pub kind: ObjectKind,
    pub embedding: Option<Feature>,
}

/// Ground-truth scene. The room spans `[-x/2, x/2] x [-y/2, y/2] x [0, z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScene {
    pub objects: Vec<GtObject>,
    pub room: Vec3,
    pub seed: u64,
}

impl SimScene {
    /// Gives every object its own random unit embedding of dimension `dim`.
    pub fn with_embeddings(mut self, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        for obj in &mut self.objects {
            let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            obj.embedding = Feature::normalized(&v);
        }
        self
    }

    pub fn contains(&self, b: &OrientedBox3D) -> bool {
        let half = Vec3::new(self.room.x / 2.0, self.room.y / 2.0, f64::INFINITY);
        b.corners().iter().all(|c| c.x.abs() <= half.x && c.y.abs() <= half.y && c.z >= -1e-9 && c.z <= self.room.z)
    }
}

pub fn default_room() -> Vec3 {
    Vec3::new(6.0, 6.0, 3.0)
}

fn yawed(center: Vec3, size: Vec3, yaw: f64) -> OrientedBox3D {
    OrientedBox3D { center, size, rotation: Rotation3::from_axis_angle(&Vec3::z_axis(), yaw) }
}

fn inflated(b: &OrientedBox3D, margin: f64) -> OrientedBox3D {
    OrientedBox3D { size: b.size.add_scalar(margin), ..*b }
}

/// Non-overlapping boxes: roughly 60% furniture on the floor and the rest
/// small objects resting on furniture tops.
pub fn simulate_scene(seed: u64, n_objects: usize, room: Vec3) -> Result<SimScene, SimError> {
    if n_objects == 0 {
        return Err(SimError::NoObjects);
    }
    if !(room.x > 2.0 && room.y > 2.0 && room.z > 1.5) || !room.iter().all(|v| v.is_finite()) {
        return Err(SimError::InvalidRoom(room.x, room.y, room.z));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_furniture = ((n_objects as f64 * 0.6).ceil() as usize).max(1);
    let mut objects: Vec<GtObject> = Vec::with_capacity(n_objects);

    for index in 0..n_objects {
        let furniture = index < n_furniture;
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let candidate = if furniture {
                let size = Vec3::new(rng.gen_range(0.4..2.0), rng.gen_range(0.4..1.0), rng.gen_range(0.4..1.2));
                let center = Vec3::new(
                    rng.gen_range(-room.x / 2.0..room.x / 2.0),
                    rng.gen_range(-room.y / 2.0..room.y / 2.0),
                    size.z / 2.0,
                );
                yawed(center, size, yaw)
            } else {
                let host = &objects[rng.gen_range(0..n_furniture)].bbox;
                let size = Vec3::new(rng.gen_range(0.03..0.3), rng.gen_range(0.03..0.3), rng.gen_range(0.03..0.3));
                let reach = 0.5 * (size.x * size.x + size.y * size.y).sqrt();
                let hx = (host.size.x / 2.0 - reach).max(0.0);
                let hy = (host.size.y / 2.0 - reach).max(0.0);
                let local = Vec3::new(rng.gen_range(-hx..=hx), rng.gen_range(-hy..=hy), 0.0);
                let mut center = host.center + host.rotation * local;
                center.z = host.center.z + host.size.z / 2.0 + SMALL_GAP + size.z / 2.0;
                yawed(center, size, yaw)
            };
            let margin = if furniture { FURNITURE_GAP } else { SMALL_GAP };
            let probe = inflated(&candidate, margin);
            if scene_contains(room, &candidate)
                && objects.iter().all(|o| exact_iou_3d(&probe, &o.bbox) == 0.0)
            {
                placed = Some(candidate);
                break;
            }
        }
        let bbox = placed.ok_or(SimError::Placement { index, tries: PLACEMENT_TRIES })?;
        objects.push(GtObject {
            id: index as u64,
            bbox,
            kind: if furniture { ObjectKind::Furniture } else { ObjectKind::Small },
            embedding: None,
        });
    }
    Ok(SimScene { objects, room, seed })
}

fn scene_contains(room: Vec3, b: &OrientedBox3D) -> bool {
    SimScene { objects: Vec::new(), room, seed: 0 }.contains(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryPattern {
    Orbit,
    Lawnmower,
}

impl std::str::FromStr for TrajectoryPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orbit" => Ok(Self::Orbit),
            "lawnmower" => Ok(Self::Lawnmower),
            other => Err(format!("unknown trajectory pattern '{other}' (expected orbit or lawnmower)")),
        }
    }
}

/// Camera poses (`world_from_cam`) at 1.2 to 1.8 m height, looking into the room.
///
/// The orbit circles the room center once at a radius of 0.6 x the longer
/// room side, so the last pose lands one step short of the first. The
/// lawnmower sweeps serpentine rows across the front half of the room
/// while facing `+y`.
pub fn simulate_trajectory(scene: &SimScene, n_frames: usize, pattern: TrajectoryPattern, seed: u64) -> Result<Vec<Pose>, SimError> {
    if n_frames == 0 {
        return Err(SimError::NoFrames);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let room = scene.room;
    let target = Vec3::new(0.0, 0.0, 0.6);
    let poses = match pattern {
        TrajectoryPattern::Orbit => {
            let radius = 0.6 * room.x.max(room.y);
            (0..n_frames)
                .map(|i| {
                    let t = i as f64 / n_frames as f64;
                    let a = phase + std::f64::consts::TAU * t;
                    let h = 1.5 + 0.3 * (2.0 * a).sin();
                    let pos = Vec3::new(radius * a.cos(), radius * a.sin(), h);
                    Pose::from_parts(pos.into(), look_rotation(&(target - pos), &Vec3::z()))
                })
                .collect()
        }
        TrajectoryPattern::Lawnmower => {
            let rows = 3;
            let xs = room.x / 2.0;
            let y0 = -room.y / 2.0 - 1.0;
            let row_gap = 0.6;
            let row_len = 2.0 * xs;
            let total = rows as f64 * row_len + (rows - 1) as f64 * row_gap;
            let forward = Vec3::new(0.0, 1.0, -0.45);
            (0..n_frames)
                .map(|i| {
                    let s = if n_frames == 1 { 0.0 } else { total * i as f64 / (n_frames - 1) as f64 };
                    let row = ((s / (row_len + row_gap)).floor() as usize).min(rows - 1);
                    let within = s - row as f64 * (row_len + row_gap);
                    let (x, y) = if within <= row_len {
                        let x = if row % 2 == 0 { -xs + within } else { xs - within };
                        (x, y0 + row as f64 * row_gap)
                    } else {
                        let x = if row % 2 == 0 { xs } else { -xs };
                        (x, y0 + row as f64 * row_gap + (within - row_len))
                    };
                    let h = 1.5 + 0.3 * (s / total * std::f64::consts::TAU + phase).sin();
                    let pos = Vec3::new(x, y, h);
                    Pose::from_parts(pos.into(), look_rotation(&forward, &Vec3::z()))
                })
                .collect()
        }
    };
    Ok(poses)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Transverse center noise as a fraction of the mean box extent; the
    /// along-ray component is three times larger.
    pub center_sigma_rel: f64,
    /// Log-normal multiplicative size noise.
    pub scale_sigma: f64,
    /// Yaw jitter bound, radians.
    pub rot_jitter: f64,
    pub dropout_p: f64,
    pub score_base: f64,
    pub score_noise: f64,
    /// Per-view perturbation of object embeddings before renormalization.
    pub feature_noise: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            center_sigma_rel: 0.05,
            scale_sigma: 0.15,
            rot_jitter: 3f64.to_radians(),
            dropout_p: 0.1,
            score_base: 0.8,
            score_noise: 0.1,
            feature_noise: 0.05,
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            center_sigma_rel: 0.0,
            scale_sigma: 0.0,
            rot_jitter: 0.0,
            dropout_p: 0.0,
            score_base: 0.8,
            score_noise: 0.0,
            feature_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("center_sigma_rel", self.center_sigma_rel),
            ("scale_sigma", self.scale_sigma),
            ("rot_jitter", self.rot_jitter),
            ("dropout_p", self.dropout_p),
            ("score_base", self.score_base),
            ("score_noise", self.score_noise),
            ("feature_noise", self.feature_noise),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} = {v} must be a finite non-negative number"));
            }
        }
        if self.dropout_p > 1.0 {
            return Err(format!("dropout_p = {} must be at most 1", self.dropout_p));
        }
        Ok(())
    }
}

/// Frustum half-spaces of a camera, in camera coordinates.
fn frustum(k: &Intrinsics, near: f64) -> [HalfSpace; 5] {
    let hs = |normal: Vec3| HalfSpace { normal, offset: 0.0 };
    [
        HalfSpace { normal: -Vec3::z(), offset: -near },
        hs(Vec3::new(-k.fx, 0.0, -k.cx)),
        hs(Vec3::new(k.fx, 0.0, k.cx - k.width)),
        hs(Vec3::new(0.0, -k.fy, -k.cy)),
        hs(Vec3::new(0.0, k.fy, k.cy - k.height)),
    ]
}

/// Shrinks a camera-frame box to the box-aligned bounds of its part inside
/// the view frustum. Boxes whose corners all project into the image are
/// returned unchanged; `None` when nothing is inside.
pub fn truncate_to_frustum(box_cam: &OrientedBox3D, k: &Intrinsics) -> Option<OrientedBox3D> {
    let corners = box_cam.corners();
    let all_in = corners.iter().all(|c| c.z >= TRUNCATION_NEAR && k.in_image(&k.project(c)));
    if all_in {
        return Some(*box_cam);
    }
    let planes = frustum(k, TRUNCATION_NEAR);
    let eps = 1e-12 * box_cam.size.max().max(1.0);
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    let mut include = |p: &Vec3| {
        let local = box_cam.to_local(p);
        lo = lo.inf(&local);
        hi = hi.sup(&local);
    };
    for face in BOX_FACES {
        let mut poly: Poly3 = face.iter().map(|&i| corners[i]).collect();
        for plane in &planes {
            poly = clip_polygon_3d(&poly, plane, eps);
            if poly.is_empty() {
                break;
            }
        }
        poly.iter().for_each(&mut include);
    }
    // frustum corners on the near plane that sit inside the box
    for (u, v) in [(0.0, 0.0), (k.width, 0.0), (0.0, k.height), (k.width, k.height)] {
        let p = Vec3::new((u - k.cx) / k.fx * TRUNCATION_NEAR, (v - k.cy) / k.fy * TRUNCATION_NEAR, TRUNCATION_NEAR);
        if box_cam.contains_point(&p) {
            include(&p);
        }
    }
    if !(lo.iter().all(|v| v.is_finite())) {
        return None;
    }
    let half = box_cam.half_size();
    let lo = lo.sup(&-half);
    let hi = hi.inf(&half);
    let size = hi - lo;
    if size.iter().any(|s| *s <= 0.0) {
        return None;
    }
    let center_local = (lo + hi) / 2.0;
    Some(OrientedBox3D {
        center: box_cam.center + box_cam.rotation * center_local,
        size,
        rotation: box_cam.rotation,
    })
}

/// One frame of detector output plus, per proposal, the GT id it came from.
///
/// The ids are for oracle checks only and are not part of [`FrameInput`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFrame {
    pub frame: FrameInput,
    pub provenance: Vec<u64>,
}

pub fn simulate_proposals(
    scene: &SimScene,
    world_from_cam: &Pose,
    k: &Intrinsics,
    noise: &NoiseModel,
    seed: u64,
    frame_id: u64,
) -> SimulatedFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_id.wrapping_add(16));
    let mut feature_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);
    feature_rng.set_stream(frame_id);
    let cam_from_world = world_from_cam.inverse();
    let cam_pos = world_from_cam.translation.vector;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut proposals = Vec::new();
    let mut provenance = Vec::new();

    for obj in &scene.objects {
        // fixed draw count per object keeps streams aligned across noise settings
        let u_drop: f64 = rng.gen();
        let z: [f64; 6] = std::array::from_fn(|_| std_normal.sample(&mut rng));
        let u_rot: f64 = rng.gen_range(-1.0..=1.0);
        let z_score = std_normal.sample(&mut rng);

        let box_cam = transform_box(&cam_from_world, &obj.bbox);
        let depth = box_cam.center.z;
        if !(MIN_DEPTH..=MAX_DEPTH).contains(&depth) || !k.in_image(&k.project(&box_cam.center)) {
            continue;
        }
        if u_drop < noise.dropout_p {
            continue;
        }
        let Some(truncated) = truncate_to_frustum(&box_cam, k) else { continue };
        let mut b = transform_box(world_from_cam, &truncated);
        if truncated == box_cam {
            b = obj.bbox;
        }

        if noise.center_sigma_rel > 0.0 {
            let sigma = noise.center_sigma_rel * b.size.mean();
            let ray = (b.center - cam_pos).normalize();
            let helper = if ray.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
            let t1 = ray.cross(&helper).normalize();
            let t2 = ray.cross(&t1);
            b.center += ray * (3.0 * sigma * z[0]) + t1 * (sigma * z[1]) + t2 * (sigma * z[2]);
        }
        if noise.scale_sigma > 0.0 {
            b.size.x *= (noise.scale_sigma * z[3]).exp();
            b.size.y *= (noise.scale_sigma * z[4]).exp();
            b.size.z *= (noise.scale_sigma * z[5]).exp();
        }
        if noise.rot_jitter > 0.0 {
            b.rotation = Rotation3::from_axis_angle(&Vec3::z_axis(), noise.rot_jitter * u_rot) * b.rotation;
        }
        let score = (noise.score_base + noise.score_noise * z_score).clamp(0.0, 1.0);

        let feature = obj.embedding.as_ref().and_then(|e| {
            if noise.feature_noise == 0.0 {
                return Some(e.clone());
            }
            let v: Vec<f64> =
                e.values().iter().map(|x| *x as f64 + noise.feature_noise * std_normal.sample(&mut feature_rng)).collect();
            Feature::normalized(&v)
        });

        proposals.push(ProposalInput { box_cam: transform_box(&cam_from_world, &b), score, feature });
        provenance.push(obj.id);
    }

    SimulatedFrame {
        frame: FrameInput {
            frame_id,
            timestamp: frame_id as f64 / 30.0,
            intrinsics: *k,
            world_from_cam: *world_from_cam,
            proposals,
        },
        provenance,
    }
}

/// Everything needed to generate a benchmark stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub seed: u64,
    pub n_objects: usize,
    pub room: [f64; 3],
    pub n_frames: usize,
    pub pattern: TrajectoryPattern,
    pub noise: NoiseModel,
    pub intrinsics: Intrinsics,
    /// Embedding dimension; 0 disables features.
    pub feature_dim: usize,
}

impl Default for SimSpec {
    fn default() -> Self {
        let room = default_room();
        Self {
            seed: 0,
            n_objects: 20,
            room: [room.x, room.y, room.z],
            n_frames: 120,
            pattern: TrajectoryPattern::Orbit,
            noise: NoiseModel::default(),
            intrinsics: Intrinsics::default(),
            feature_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub scene: SimScene,
    pub frames: Vec<SimulatedFrame>,
}

impl SimRun {
    pub fn inputs(&self) -> impl Iterator<Item = &FrameInput> {
        self.frames.iter().map(|f| &f.frame)
    }
}

pub fn simulate(spec: &SimSpec) -> Result<SimRun, SimError> {
    let room = Vec3::from(spec.room);
    let mut scene = simulate_scene(spec.seed, spec.n_objects, room)?;
    if spec.feature_dim > 0 {
        scene = scene.with_embeddings(spec.feature_dim, spec.seed);
    }
    let poses = simulate_trajectory(&scene, spec.n_frames, spec.pattern, spec.seed)?;
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| simulate_proposals(&scene, pose, &spec.intrinsics, &spec.noise, spec.seed, i as u64))
        .collect();
    Ok(SimRun { scene, frames })
}
