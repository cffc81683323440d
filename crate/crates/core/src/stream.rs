//! Online orchestration of association and fusion over a keyframe stream.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{
    correspondence_associate, spatial_associate, AssociationConfig, CameraFrame, CandidateObservation, ConfigError,
    GlobalSet, ObjectId,
};
use crate::fusion::{maybe_fuse, pst_generate, FusionConfig, SwarmTemplate};
use crate::geometry::{transform_box, Intrinsics, McSampler, OrientedBox3D, Pose};
use crate::semantics::{fuse_features, Feature};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("frame {got} does not follow frame {previous}")]
    NonMonotoneFrame { previous: u64, got: u64 },
    #[error("frame {frame_id}: {reason}")]
    InvalidFrame { frame_id: u64, reason: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One single-view proposal, in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalInput {
    pub box_cam: OrientedBox3D,
    pub score: f64,
    pub feature: Option<Feature>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub frame_id: u64,
    pub timestamp: f64,
    pub intrinsics: Intrinsics,
    pub world_from_cam: Pose,
    pub proposals: Vec<ProposalInput>,
}

impl FrameInput {
    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |reason: String| StreamError::InvalidFrame { frame_id: self.frame_id, reason };
        self.intrinsics.validate().map_err(|e| bad(e.to_string()))?;
        let q = self.world_from_cam.rotation.quaternion();
        if !self.world_from_cam.translation.vector.iter().all(|v| v.is_finite()) || !q.coords.iter().all(|v| v.is_finite()) {
            return Err(bad("pose is not finite".into()));
        }
        for (i, p) in self.proposals.iter().enumerate() {
            p.box_cam.validate().map_err(|e| bad(format!("proposal {i}: {e}")))?;
            if !(0.0..=1.0).contains(&p.score) {
                return Err(bad(format!("proposal {i}: score {} outside [0, 1]", p.score)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframeConfig {
    /// Rotation threshold, radians.
    pub theta_kf: f64,
    /// Translation threshold, meters.
    pub d_kf: f64,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self { theta_kf: 10f64.to_radians(), d_kf: 0.1 }
    }
}

/// True for the first frame, and whenever the camera has rotated by more
/// than `theta_kf` or moved by more than `d_kf` since the last keyframe.
pub fn is_keyframe(pose: &Pose, last_kf: Option<&Pose>, theta_kf: f64, d_kf: f64) -> bool {
    let Some(last) = last_kf else { return true };
    pose.rotation.angle_to(&last.rotation) > theta_kf
        || (pose.translation.vector - last.translation.vector).norm() > d_kf
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub association: AssociationConfig,
    pub fusion: FusionConfig,
    pub keyframe: KeyframeConfig,
    pub seed: u64,
    pub fusion_enabled: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            association: AssociationConfig::default(),
            fusion: FusionConfig::default(),
            keyframe: KeyframeConfig::default(),
            seed: 0,
            fusion_enabled: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.association.validate()?;
        self.fusion.validate()?;
        crate::association::check("theta_kf", self.keyframe.theta_kf, self.keyframe.theta_kf >= 0.0, ">= 0")?;
        crate::association::check("d_kf", self.keyframe.d_kf, self.keyframe.d_kf >= 0.0, ">= 0")?;
        Ok(())
    }
}

const HIST_BUCKETS: usize = 128;
const HIST_SUBDIV: f64 = 4.0;

/// Fixed-size latency histogram with log-spaced buckets (four per octave,
/// from 1 us).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    counts: Vec<u64>,
    count: u64,
    total_us: f64,
}

impl Default for Histogram {
    fn default() -> Self {
        Self { counts: vec![0; HIST_BUCKETS], count: 0, total_us: 0.0 }
    }
}

impl Histogram {
    pub fn record(&mut self, d: Duration) {
        let us = d.as_secs_f64() * 1e6;
        let bucket = if us <= 1.0 { 0 } else { ((us.log2() * HIST_SUBDIV).floor() as usize + 1).min(HIST_BUCKETS - 1) };
        self.counts[bucket] += 1;
        self.count += 1;
        self.total_us += us;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Option<Duration> {
        (self.count > 0).then(|| Duration::from_secs_f64(self.total_us / self.count as f64 * 1e-6))
    }

    /// Upper edge of the bucket holding the `q`-quantile.
    pub fn quantile(&self, q: f64) -> Option<Duration> {
        if self.count == 0 {
            return None;
        }
        let rank = ((q.clamp(0.0, 1.0) * self.count as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (i, c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= rank {
                let upper_us = (i as f64 / HIST_SUBDIV).exp2();
                return Some(Duration::from_secs_f64(upper_us * 1e-6));
            }
        }
        None
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageHistograms {
    pub transform: Histogram,
    pub spatial: Histogram,
    pub correspondence: Histogram,
    pub fusion: Histogram,
    pub features: Histogram,
    pub prune: Histogram,
    pub total: Histogram,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub frames_seen: u64,
    pub keyframes: u64,
    pub objects_created: u64,
    /// Proposals stored into existing objects by 3D NMS.
    pub merges_spatial: u64,
    /// Proposals stored into existing objects by projected-hull matching.
    pub merges_correspondence: u64,
    /// Global objects absorbed into another.
    pub objects_merged: u64,
    pub proposals_dropped: u64,
    pub fusions_run: u64,
    pub stage_times: StageHistograms,
}

/// Per-stage wall time of one frame, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub transform: f64,
    pub spatial: f64,
    pub correspondence: f64,
    pub fusion: f64,
    pub features: f64,
    pub prune: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameEvents {
    pub frame_id: u64,
    pub keyframe: bool,
    pub n_proposals: usize,
    pub created: Vec<ObjectId>,
    /// `(object, proposal index)` stored by 3D NMS.
    pub stored_spatial: Vec<(ObjectId, usize)>,
    /// `(object, proposal index)` stored by projected-hull matching.
    pub stored_correspondence: Vec<(ObjectId, usize)>,
    /// Proposal indices discarded by the view gate or the candidate cap.
    pub dropped: Vec<usize>,
    /// `(kept, absorbed)` object merges.
    pub merged: Vec<(ObjectId, ObjectId)>,
    pub fused: Vec<ObjectId>,
    pub timings: StageTimings,
}

/// Everything a scene carries between frames.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub globals: GlobalSet,
    /// Cameras of frames that still back at least one candidate.
    pub frames: BTreeMap<u64, CameraFrame>,
    pub last_keyframe_pose: Option<Pose>,
    pub last_frame_id: Option<u64>,
    pub stats: PipelineStats,
}

#[derive(Serialize)]
struct PersistentView<'a> {
    globals: &'a GlobalSet,
    frames: &'a BTreeMap<u64, CameraFrame>,
}

impl SceneState {
    /// Objects, candidates and the frame registry, without counters or the
    /// keyframe cursor. Equal scenes serialize to equal bytes.
    pub fn persistent_json(&self) -> String {
        serde_json::to_string(&PersistentView { globals: &self.globals, frames: &self.frames })
            .expect("scene state is always serializable")
    }

    /// True iff every candidate's frame is registered and every registered
    /// frame backs a candidate.
    pub fn registry_consistent(&self) -> bool {
        let referenced: BTreeSet<u64> = self.candidates().map(|c| c.frame_id).collect();
        referenced.iter().eq(self.frames.keys())
    }

    pub fn candidates(&self) -> impl Iterator<Item = &CandidateObservation> {
        self.globals.objects.values().flat_map(|g| g.candidates.iter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotObject {
    pub id: ObjectId,
    pub bbox: OrientedBox3D,
    pub score: f64,
    pub n_views: usize,
    pub feature: Option<Feature>,
}

/// Immutable export of the global objects, ordered by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneSnapshot {
    pub objects: Vec<SnapshotObject>,
}

pub fn export_scene(state: &SceneState) -> SceneSnapshot {
    SceneSnapshot {
        objects: state
            .globals
            .objects
            .values()
            .map(|g| SnapshotObject {
                id: g.id,
                bbox: g.bbox,
                score: g.score,
                n_views: g.candidates.len(),
                feature: g.feature.clone(),
            })
            .collect(),
    }
}

/// A scene plus the fixed machinery (sampler, swarm template) that processes it.
pub struct Pipeline {
    cfg: PipelineConfig,
    pst: SwarmTemplate,
    sampler: McSampler,
    state: SceneState,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, StreamError> {
        cfg.validate()?;
        let pst = pst_generate(cfg.fusion.n_pst, cfg.seed).expect("n_pst validated");
        let sampler = McSampler::new(cfg.association.o_n, cfg.seed);
        Ok(Self { cfg, pst, sampler, state: SceneState::default() })
    }

    /// Resumes from a previously saved state.
    pub fn with_state(cfg: PipelineConfig, state: SceneState) -> Result<Self, StreamError> {
        let mut p = Self::new(cfg)?;
        p.state = state;
        Ok(p)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SceneState {
        &self.state
    }

    pub fn into_state(self) -> SceneState {
        self.state
    }

    pub fn snapshot(&self) -> SceneSnapshot {
        export_scene(&self.state)
    }

    pub fn process_frame(&mut self, frame: FrameInput) -> Result<FrameEvents, StreamError> {
        if let Some(previous) = self.state.last_frame_id {
            if frame.frame_id <= previous {
                return Err(StreamError::NonMonotoneFrame { previous, got: frame.frame_id });
            }
        }
        frame.validate()?;
        let t_start = Instant::now();
        let state = &mut self.state;
        state.last_frame_id = Some(frame.frame_id);
        state.stats.frames_seen += 1;

        let mut events = FrameEvents { frame_id: frame.frame_id, n_proposals: frame.proposals.len(), ..Default::default() };
        let kf = &self.cfg.keyframe;
        if !is_keyframe(&frame.world_from_cam, state.last_keyframe_pose.as_ref(), kf.theta_kf, kf.d_kf) {
            events.n_proposals = 0;
            return Ok(events);
        }
        events.keyframe = true;
        state.stats.keyframes += 1;
        state.last_keyframe_pose = Some(frame.world_from_cam);

        let cam_from_world = frame.world_from_cam.inverse();
        let camera = CameraFrame { frame_id: frame.frame_id, intrinsics: frame.intrinsics, cam_from_world };
        let observations: Vec<CandidateObservation> = frame
            .proposals
            .into_iter()
            .map(|p| CandidateObservation {
                box_world: transform_box(&frame.world_from_cam, &p.box_cam),
                score: p.score,
                frame_id: frame.frame_id,
                cam_from_world,
                intrinsics: frame.intrinsics,
                feature: p.feature,
            })
            .collect();
        let t_transform = Instant::now();

        let spatial = spatial_associate(&mut state.globals, observations, &self.cfg.association, &self.sampler);
        let t_spatial = Instant::now();
        let corr = correspondence_associate(spatial.unmatched, &mut state.globals, &camera, &self.cfg.association);
        let t_corr = Instant::now();

        events.created = spatial.created.into_iter().chain(corr.created).collect();
        events.stored_spatial = spatial.stored;
        events.stored_correspondence = corr.stored;
        events.dropped = spatial.dropped.into_iter().chain(corr.dropped).collect();
        events.merged = spatial.merged;

        if self.cfg.fusion_enabled {
            for obj in state.globals.objects.values_mut() {
                if maybe_fuse(obj, &self.pst, &self.cfg.fusion).is_some() {
                    events.fused.push(obj.id);
                }
            }
        }
        let t_fusion = Instant::now();

        let touched: BTreeSet<ObjectId> = events
            .created
            .iter()
            .copied()
            .chain(events.stored_spatial.iter().map(|s| s.0))
            .chain(events.stored_correspondence.iter().map(|s| s.0))
            .chain(events.merged.iter().map(|m| m.0))
            .collect();
        for id in &touched {
            if let Some(obj) = state.globals.objects.get_mut(id) {
                obj.feature = fuse_features(&obj.candidates);
            }
        }
        let t_features = Instant::now();

        if !events.created.is_empty() || !events.stored_spatial.is_empty() || !events.stored_correspondence.is_empty() {
            state.frames.insert(frame.frame_id, camera);
        }
        let referenced: BTreeSet<u64> = state.candidates().map(|c| c.frame_id).collect();
        state.frames.retain(|id, _| referenced.contains(id));
        let t_prune = Instant::now();

        let stats = &mut state.stats;
        stats.objects_created += events.created.len() as u64;
        stats.merges_spatial += events.stored_spatial.len() as u64;
        stats.merges_correspondence += events.stored_correspondence.len() as u64;
        stats.objects_merged += events.merged.len() as u64;
        stats.proposals_dropped += events.dropped.len() as u64;
        stats.fusions_run += events.fused.len() as u64;

        let h = &mut stats.stage_times;
        let spans = [
            (&mut h.transform, &mut events.timings.transform, t_start, t_transform),
            (&mut h.spatial, &mut events.timings.spatial, t_transform, t_spatial),
            (&mut h.correspondence, &mut events.timings.correspondence, t_spatial, t_corr),
            (&mut h.fusion, &mut events.timings.fusion, t_corr, t_fusion),
            (&mut h.features, &mut events.timings.features, t_fusion, t_features),
            (&mut h.prune, &mut events.timings.prune, t_features, t_prune),
            (&mut h.total, &mut events.timings.total, t_start, t_prune),
        ];
        for (hist, ms, from, to) in spans {
            let d = to - from;
            hist.record(d);
            *ms = d.as_secs_f64() * 1e3;
        }
        Ok(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_rotation, Rotation3, Vec3};

    fn pose(pos: Vec3, target: Vec3) -> Pose {
        Pose::from_parts(pos.into(), look_rotation(&(target - pos), &Vec3::z()))
    }

    fn frame(id: u64, world_from_cam: Pose, boxes_world: &[OrientedBox3D]) -> FrameInput {
        let cam_from_world = world_from_cam.inverse();
        FrameInput {
            frame_id: id,
            timestamp: id as f64 / 30.0,
            intrinsics: Intrinsics::default(),
            world_from_cam,
            proposals: boxes_world
                .iter()
                .map(|b| ProposalInput { box_cam: transform_box(&cam_from_world, b), score: 0.9, feature: None })
                .collect(),
        }
    }

    fn three_boxes() -> Vec<OrientedBox3D> {
        vec![
            OrientedBox3D::axis_aligned(Vec3::new(-1.0, 0.0, 0.3), Vec3::repeat(0.5)),
            OrientedBox3D::axis_aligned(Vec3::new(0.0, 0.5, 0.3), Vec3::repeat(0.4)),
            OrientedBox3D::axis_aligned(Vec3::new(1.0, 0.0, 0.3), Vec3::repeat(0.6)),
        ]
    }

    fn conserved(e: &FrameEvents) -> bool {
        e.n_proposals == e.created.len() + e.stored_spatial.len() + e.stored_correspondence.len() + e.dropped.len()
    }

    #[test]
    fn keyframe_rule() {
        let p = Pose::identity();
        assert!(is_keyframe(&p, None, 0.1, 0.1));
        assert!(!is_keyframe(&p, Some(&p), 0.1, 0.1));
        assert!(is_keyframe(&Pose::translation(0.2, 0.0, 0.0), Some(&p), 0.1, 0.1));
        assert!(!is_keyframe(&Pose::translation(0.05, 0.0, 0.0), Some(&p), 0.1, 0.1));
        let turned = Pose::from_parts(Default::default(), Rotation3::from_axis_angle(&Vec3::y_axis(), 0.2));
        assert!(is_keyframe(&turned, Some(&p), 0.1, 0.1));
    }

    #[test]
    fn histogram_quantiles() {
        let mut h = Histogram::default();
        assert_eq!(h.quantile(0.5), None);
        for ms in 1..=100 {
            h.record(Duration::from_millis(ms));
        }
        let med = h.quantile(0.5).unwrap().as_secs_f64() * 1e3;
        // one bucket spans a factor 2^(1/4)
        assert!((50.0..=50.0 * 1.19).contains(&med), "{med}");
        let p95 = h.quantile(0.95).unwrap().as_secs_f64() * 1e3;
        assert!((95.0..=95.0 * 1.19).contains(&p95), "{p95}");
        assert_eq!(h.count(), 100);
    }

    #[test]
    fn three_disjoint_proposals_create_three() {
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        let cam = pose(Vec3::new(0.0, -3.0, 1.5), Vec3::new(0.0, 0.0, 0.3));
        let e = p.process_frame(frame(0, cam, &three_boxes())).unwrap();
        assert_eq!(e.created, vec![0, 1, 2]);
        assert!(e.merged.is_empty() && e.fused.is_empty());
        assert!(conserved(&e));
        let snap = p.snapshot();
        assert_eq!(snap.objects.iter().map(|o| o.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        for (o, b) in snap.objects.iter().zip(three_boxes()) {
            assert!((o.bbox.center - b.center).norm() < 1e-12);
        }
        assert!(p.state().registry_consistent());
        assert_eq!(p.state().frames.len(), 1);
    }

    #[test]
    fn replay_from_same_pose_is_absorbed() {
        let mut cfg = PipelineConfig::default();
        cfg.keyframe.theta_kf = 0.0;
        cfg.keyframe.d_kf = 0.0;
        let mut p = Pipeline::new(cfg).unwrap();
        let cam = pose(Vec3::new(0.0, -3.0, 1.5), Vec3::new(0.0, 0.0, 0.3));
        p.process_frame(frame(0, cam, &three_boxes())).unwrap();
        let before = p.state().globals.clone();
        // identical pose is not a keyframe under the default rule; force it through
        let e = p.process_frame(frame(1, cam, &three_boxes())).unwrap();
        assert!(!e.keyframe);
        let mut p2 = Pipeline::with_state(cfg, p.state().clone()).unwrap();
        p2.state.last_keyframe_pose = None;
        let e = p2.process_frame(frame(2, cam, &three_boxes())).unwrap();
        assert!(e.keyframe);
        assert!(e.created.is_empty());
        assert_eq!(e.dropped.len(), 3);
        assert!(conserved(&e));
        assert_eq!(p2.state().globals, before);
    }

    #[test]
    fn non_keyframes_do_not_touch_the_scene() {
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        let cam = pose(Vec3::new(0.0, -3.0, 1.5), Vec3::new(0.0, 0.0, 0.3));
        p.process_frame(frame(0, cam, &three_boxes())).unwrap();
        let before = p.state().persistent_json();
        let nudged = Pose::from_parts((cam.translation.vector + Vec3::new(0.02, 0.0, 0.0)).into(), cam.rotation);
        let e = p.process_frame(frame(1, nudged, &[OrientedBox3D::axis_aligned(Vec3::zeros(), Vec3::repeat(3.0))])).unwrap();
        assert!(!e.keyframe);
        assert_eq!(p.state().persistent_json(), before);
        assert_eq!(p.state().stats.frames_seen, 2);
        assert_eq!(p.state().stats.keyframes, 1);
    }

    #[test]
    fn non_monotone_frame_rejected() {
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        p.process_frame(frame(5, Pose::identity(), &[])).unwrap();
        assert_eq!(
            p.process_frame(frame(5, Pose::translation(1.0, 0.0, 0.0), &[])),
            Err(StreamError::NonMonotoneFrame { previous: 5, got: 5 })
        );
        assert!(p.process_frame(frame(3, Pose::identity(), &[])).is_err());
    }

    #[test]
    fn invalid_frame_rejected_with_id() {
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        let mut f = frame(7, Pose::identity(), &three_boxes());
        f.proposals[1].score = 1.5;
        match p.process_frame(f) {
            Err(StreamError::InvalidFrame { frame_id, .. }) => assert_eq!(frame_id, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn third_diverse_view_triggers_fusion_and_prunes_frames() {
        let b = OrientedBox3D::axis_aligned(Vec3::new(0.0, 0.0, 0.4), Vec3::new(0.8, 0.6, 0.8));
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        let target = b.center;
        let mut fused_at = None;
        for k in 0..4u64 {
            let a = k as f64 * 0.6;
            let cam = pose(Vec3::new(3.0 * a.sin(), -3.0 * a.cos(), 1.5), target);
            let e = p.process_frame(frame(k, cam, &[b])).unwrap();
            assert!(conserved(&e));
            if !e.fused.is_empty() && fused_at.is_none() {
                fused_at = Some(k);
            }
        }
        assert_eq!(fused_at, Some(2));
        assert_eq!(p.state().globals.len(), 1);
        assert_eq!(p.state().frames.len(), 4);
        let fused = &p.snapshot().objects[0];
        assert!(crate::geometry::exact_iou_3d(&fused.bbox, &b) > 0.99);
        assert!(p.state().registry_consistent());
    }

    #[test]
    fn fusion_can_be_disabled() {
        let b = OrientedBox3D::axis_aligned(Vec3::new(0.0, 0.0, 0.4), Vec3::new(0.8, 0.6, 0.8));
        let cfg = PipelineConfig { fusion_enabled: false, ..Default::default() };
        let mut p = Pipeline::new(cfg).unwrap();
        for k in 0..4u64 {
            let a = k as f64 * 0.6;
            let e = p.process_frame(frame(k, pose(Vec3::new(3.0 * a.sin(), -3.0 * a.cos(), 1.5), b.center), &[b])).unwrap();
            assert!(e.fused.is_empty());
        }
        assert_eq!(p.state().stats.fusions_run, 0);
    }

    #[test]
    fn features_follow_candidates() {
        let b = OrientedBox3D::axis_aligned(Vec3::new(0.0, 0.0, 0.4), Vec3::new(0.8, 0.6, 0.8));
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        let feats = [Feature::normalized(&[1.0, 0.0]).unwrap(), Feature::normalized(&[0.0, 1.0]).unwrap()];
        for (k, f) in feats.iter().enumerate() {
            let a = k as f64 * 0.6;
            let mut fr = frame(k as u64, pose(Vec3::new(3.0 * a.sin(), -3.0 * a.cos(), 1.5), b.center), &[b]);
            fr.proposals[0].feature = Some(f.clone());
            p.process_frame(fr).unwrap();
        }
        let f = p.snapshot().objects[0].feature.clone().unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((f.values()[0] - h).abs() < 1e-6 && (f.values()[1] - h).abs() < 1e-6);
    }

    #[test]
    fn state_round_trips_through_json() {
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        let cam = pose(Vec3::new(0.0, -3.0, 1.5), Vec3::new(0.0, 0.0, 0.3));
        let mut boxes = three_boxes();
        boxes[0].rotation = Rotation3::from_axis_angle(&Vec3::z_axis(), 0.123456789);
        p.process_frame(frame(0, cam, &boxes)).unwrap();
        let json = serde_json::to_string(p.state()).unwrap();
        let back: SceneState = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, p.state());
        assert_eq!(export_scene(&back), p.snapshot());
    }

    #[test]
    fn empty_scene_exports_nothing() {
        assert!(export_scene(&SceneState::default()).objects.is_empty());
    }
}
