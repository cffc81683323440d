//! Two-stage association of world-frame proposals with global objects.
//!
//! Stage one is oriented 3D NMS over the union of existing globals and new
//! proposals; suppressed entries are folded into the surviving object subject
//! to the view-diversity gate. Stage two matches the leftovers by the IoU of
//! projected hulls in the current camera, which catches small objects whose
//! per-view boxes are adjacent rather than overlapping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    aabb_of, convex_iou, project_box_hull, viewing_angle, Aabb, Intrinsics, McSampler, OrientedBox3D, Polygon2D, Pose,
};
use crate::semantics::Feature;

pub type ObjectId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{name} = {value} is out of range ({expected})")]
    OutOfRange { name: &'static str, value: f64, expected: &'static str },
}

pub(crate) fn check(name: &'static str, value: f64, ok: bool, expected: &'static str) -> Result<(), ConfigError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange { name, value, expected })
    }
}

/// One stored single-view observation of an object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateObservation {
    pub box_world: OrientedBox3D,
    pub score: f64,
    pub frame_id: u64,
    pub cam_from_world: Pose,
    pub intrinsics: Intrinsics,
    pub feature: Option<Feature>,
}

impl CandidateObservation {
    pub fn world_from_cam(&self) -> Pose {
        self.cam_from_world.inverse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalObject {
    pub id: ObjectId,
    pub bbox: OrientedBox3D,
    pub score: f64,
    pub candidates: Vec<CandidateObservation>,
    pub feature: Option<Feature>,
    /// New candidates arrived since the last fusion.
    pub fused_dirty: bool,
    pub fusion_count: u32,
}

impl GlobalObject {
    pub fn from_observation(id: ObjectId, obs: CandidateObservation) -> Self {
        Self {
            id,
            bbox: obs.box_world,
            score: obs.score,
            feature: obs.feature.clone(),
            candidates: vec![obs],
            fused_dirty: true,
            fusion_count: 0,
        }
    }

    pub fn recompute_score(&mut self) {
        self.score = self.candidates.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssociationConfig {
    /// 3D IoU above which boxes are treated as duplicates.
    pub tau_3d: f64,
    /// Projected-hull IoU above which a leftover proposal joins a global.
    pub tau_2d: f64,
    /// Viewing-direction diversity, radians.
    pub tau_r: f64,
    /// Camera-translation diversity, meters.
    pub tau_t: f64,
    /// Monte-Carlo samples per box for 3D IoU.
    pub o_n: usize,
    pub n_cand_max: usize,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self { tau_3d: 0.3, tau_2d: 0.5, tau_r: 15f64.to_radians(), tau_t: 0.3, o_n: 2048, n_cand_max: 24 }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check("tau_3d", self.tau_3d, self.tau_3d > 0.0 && self.tau_3d < 1.0, "(0, 1)")?;
        check("tau_2d", self.tau_2d, self.tau_2d > 0.0 && self.tau_2d < 1.0, "(0, 1)")?;
        check("tau_r", self.tau_r, self.tau_r > 0.0 && self.tau_r < std::f64::consts::PI, "(0, pi)")?;
        check("tau_t", self.tau_t, self.tau_t > 0.0, "> 0")?;
        check("o_n", self.o_n as f64, self.o_n >= 1, ">= 1")?;
        check("n_cand_max", self.n_cand_max as f64, self.n_cand_max >= 1, ">= 1")?;
        Ok(())
    }
}

/// Camera of the frame being associated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub frame_id: u64,
    pub intrinsics: Intrinsics,
    pub cam_from_world: Pose,
}

/// The id-keyed set of global objects plus the id allocator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalSet {
    pub objects: BTreeMap<ObjectId, GlobalObject>,
    pub next_id: ObjectId,
}

impl GlobalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn create(&mut self, obs: CandidateObservation) -> ObjectId {
        let id = self.next_id;
        self.next_id += 1;
        self.objects.insert(id, GlobalObject::from_observation(id, obs));
        id
    }
}

/// What happened to each proposal (by input index) during association.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssociationOutcome {
    /// Proposals left for the next stage, in NMS order.
    pub unmatched: Vec<(usize, CandidateObservation)>,
    /// `(object, proposal index)` for every stored observation.
    pub stored: Vec<(ObjectId, usize)>,
    /// Suppressed proposals that failed the gate or lost to the candidate cap.
    pub dropped: Vec<usize>,
    /// `(kept, absorbed)` global-object merges.
    pub merged: Vec<(ObjectId, ObjectId)>,
    pub created: Vec<ObjectId>,
}

/// True iff the new camera differs from every stored view by more than
/// `tau_r` in viewing direction or more than `tau_t` in position.
///
/// Poses are `world_from_cam`.
pub fn view_diversity_gate<'a>(
    stored_views: impl IntoIterator<Item = &'a Pose>,
    new_pose: &Pose,
    tau_r: f64,
    tau_t: f64,
) -> bool {
    stored_views.into_iter().all(|p| {
        let angle = viewing_angle(&p.rotation, &new_pose.rotation);
        let dist = (p.translation.vector - new_pose.translation.vector).norm();
        angle > tau_r || dist > tau_t
    })
}

fn gate_passes(psi: &[CandidateObservation], obs: &CandidateObservation, cfg: &AssociationConfig) -> bool {
    let stored: Vec<Pose> = psi.iter().map(|c| c.world_from_cam()).collect();
    view_diversity_gate(stored.iter(), &obs.world_from_cam(), cfg.tau_r, cfg.tau_t)
}

fn eviction_victim(obj: &GlobalObject, cap: usize) -> Option<usize> {
    if obj.candidates.len() <= cap {
        return None;
    }
    obj.candidates
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.score.total_cmp(&b.score).then(a.frame_id.cmp(&b.frame_id)))
        .map(|(i, _)| i)
}

/// Drops the lowest-score candidate (oldest frame on ties) when over `cap`.
pub fn evict_candidate(obj: &mut GlobalObject, cap: usize) -> Option<CandidateObservation> {
    let victim = eviction_victim(obj, cap)?;
    let removed = obj.candidates.remove(victim);
    obj.recompute_score();
    Some(removed)
}

/// Gated, capped insertion. Returns whether `obs` ended up in the list.
pub fn try_insert(obj: &mut GlobalObject, obs: CandidateObservation, cfg: &AssociationConfig) -> bool {
    if !gate_passes(&obj.candidates, &obs, cfg) {
        return false;
    }
    obj.candidates.push(obs);
    let pushed = obj.candidates.len() - 1;
    let victim = eviction_victim(obj, cfg.n_cand_max);
    if let Some(v) = victim {
        obj.candidates.remove(v);
    }
    obj.recompute_score();
    let kept = victim != Some(pushed);
    if kept {
        obj.fused_dirty = true;
    }
    kept
}

#[derive(Debug, Clone, Copy)]
enum Entry {
    Global(ObjectId),
    Proposal(usize),
}

struct Ranked {
    entry: Entry,
    bbox: OrientedBox3D,
    aabb: Aabb,
    score: f64,
    frame_id: u64,
    index: usize,
}

/// Oriented NMS over existing globals and new world-frame proposals.
///
/// Proposals passed in one call are expected to come from a single frame.
/// Ordering is by descending score, then ascending frame id, then input
/// index (globals first, by id). A suppressed global is merged into the
/// lowest-id global of its cluster; suppressed proposals are stored when the
/// gate passes and dropped otherwise. Proposals whose cluster holds no
/// existing global are returned as `unmatched`.
pub fn spatial_associate(
    globals: &mut GlobalSet,
    proposals: Vec<CandidateObservation>,
    cfg: &AssociationConfig,
    sampler: &McSampler,
) -> AssociationOutcome {
    let mut ranked: Vec<Ranked> = Vec::with_capacity(globals.len() + proposals.len());
    for (index, g) in globals.objects.values().enumerate() {
        let frame_id = g.candidates.iter().map(|c| c.frame_id).min().unwrap_or(0);
        ranked.push(Ranked {
            entry: Entry::Global(g.id),
            bbox: g.bbox,
            aabb: aabb_of(&g.bbox),
            score: g.score,
            frame_id,
            index,
        });
    }
    let offset = ranked.len();
    for (i, p) in proposals.iter().enumerate() {
        ranked.push(Ranked {
            entry: Entry::Proposal(i),
            bbox: p.box_world,
            aabb: aabb_of(&p.box_world),
            score: p.score,
            frame_id: p.frame_id,
            index: offset + i,
        });
    }
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.frame_id.cmp(&b.frame_id))
            .then(a.index.cmp(&b.index))
    });

    let n = ranked.len();
    let mut suppressed = vec![false; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if suppressed[i] {
            continue;
        }
        let mut members = vec![i];
        for j in (i + 1)..n {
            if suppressed[j] || !ranked[i].aabb.overlaps(&ranked[j].aabb) {
                continue;
            }
            if sampler.iou(&ranked[i].bbox, &ranked[j].bbox) > cfg.tau_3d {
                suppressed[j] = true;
                members.push(j);
            }
        }
        clusters.push(members);
    }

    let mut slots: Vec<Option<CandidateObservation>> = proposals.into_iter().map(Some).collect();
    let mut outcome = AssociationOutcome::default();
    for members in clusters {
        let mut global_ids: Vec<ObjectId> = members
            .iter()
            .filter_map(|&m| match ranked[m].entry {
                Entry::Global(id) => Some(id),
                Entry::Proposal(_) => None,
            })
            .collect();
        let proposal_idx: Vec<usize> = members
            .iter()
            .filter_map(|&m| match ranked[m].entry {
                Entry::Proposal(i) => Some(i),
                Entry::Global(_) => None,
            })
            .collect();

        if global_ids.is_empty() {
            let mut it = proposal_idx.into_iter();
            if let Some(head) = it.next() {
                let obs = slots[head].take().expect("proposal consumed twice");
                outcome.unmatched.push((head, obs));
            }
            // same-frame duplicates of the head share its camera
            outcome.dropped.extend(it);
            continue;
        }

        // The highest-ranked global provides the box; the lowest id survives.
        let box_source = global_ids[0];
        global_ids.sort_unstable();
        let keep = global_ids[0];
        let kept_box = globals.objects[&box_source].bbox;
        for &other in &global_ids[1..] {
            let absorbed = globals.objects.remove(&other).expect("global present");
            let target = globals.objects.get_mut(&keep).expect("global present");
            for c in absorbed.candidates {
                try_insert(target, c, cfg);
            }
            outcome.merged.push((keep, other));
        }
        let target = globals.objects.get_mut(&keep).expect("global present");
        target.bbox = kept_box;
        for i in proposal_idx {
            let obs = slots[i].take().expect("proposal consumed twice");
            if try_insert(target, obs, cfg) {
                outcome.stored.push((keep, i));
            } else {
                outcome.dropped.push(i);
            }
        }
    }
    outcome
}

/// Matches leftover proposals to globals by projected-hull IoU in the
/// current camera; unmatched ones become new global objects.
///
/// Only globals that exist when the call starts are candidates for matching.
pub fn correspondence_associate(
    unmatched: Vec<(usize, CandidateObservation)>,
    globals: &mut GlobalSet,
    frame: &CameraFrame,
    cfg: &AssociationConfig,
) -> AssociationOutcome {
    let projected: Vec<(ObjectId, Polygon2D)> = globals
        .objects
        .values()
        .filter_map(|g| project_box_hull(&frame.intrinsics, &frame.cam_from_world, &g.bbox).map(|h| (g.id, h)))
        .collect();

    let mut outcome = AssociationOutcome::default();
    for (idx, obs) in unmatched {
        let best = project_box_hull(&frame.intrinsics, &frame.cam_from_world, &obs.box_world).and_then(|hull| {
            projected
                .iter()
                .map(|(id, g)| (*id, convex_iou(&hull.vertices, &g.vertices)))
                .fold(None, |best: Option<(ObjectId, f64)>, (id, iou)| match best {
                    Some((_, b)) if b >= iou => best,
                    _ => Some((id, iou)),
                })
        });
        match best {
            Some((id, iou)) if iou > cfg.tau_2d && globals.objects.contains_key(&id) => {
                let target = globals.objects.get_mut(&id).expect("checked above");
                if try_insert(target, obs, cfg) {
                    outcome.stored.push((id, idx));
                } else {
                    outcome.dropped.push(idx);
                }
            }
            _ => {
                let id = globals.create(obs);
                outcome.created.push(id);
            }
        }
    }
    outcome
}
